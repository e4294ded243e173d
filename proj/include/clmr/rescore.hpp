#pragma once

// N-best rescoring: score = alpha * log P_LM(Y) + (1 - alpha) * log P_ASR(Y | X).

#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "clmr/corpus.hpp"
#include "clmr/error.hpp"
#include "clmr/evaluation.hpp"
#include "clmr/lm.hpp"
#include "clmr/scoring.hpp"

namespace clmr {

struct Hypothesis {
  std::string text;  // raw ASR output
  double asr_logprob = 0.0;
};

struct HypothesisSet {
  std::string utterance_id;
  std::vector<Hypothesis> hypotheses;
  std::optional<std::string> reference;
};

inline const std::vector<double>& default_alphas() {
  static const std::vector<double> a{0.0, 0.25, 0.5, 0.75};
  return a;
}

inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in [0, 1)");
}

/// alpha * lm + (1 - alpha) * asr. At alpha = 0 the LM term is dropped
/// entirely, so an unscorable (-inf) hypothesis still gets its ASR score.
inline double blend_score(double lm_logprob, double asr_logprob, double alpha) {
  check_alpha(alpha);
  if (alpha == 0.0) return asr_logprob;
  return alpha * lm_logprob + (1.0 - alpha) * asr_logprob;
}

struct RescoredHypothesis {
  std::string text;        // raw
  std::string normalized;  // what the LM scored
  double asr_logprob = 0.0;
  double lm_logprob = 0.0;  // -inf when the text has OOV characters
  double score = 0.0;
  std::vector<std::string> flags;
};

struct RescoredSet {
  std::string utterance_id;
  std::optional<std::string> reference;
  std::vector<RescoredHypothesis> hypotheses;
  std::size_t selected = 0;
  std::vector<std::string> flags;

  const RescoredHypothesis& winner() const { return hypotheses.at(selected); }
};

/// True when a ranks strictly ahead of b: higher score, then higher ASR
/// log-prob, then shorter normalized text, then lexicographically smaller.
inline bool ranks_ahead(const RescoredHypothesis& a, const RescoredHypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.asr_logprob != b.asr_logprob) return a.asr_logprob > b.asr_logprob;
  const auto la = codepoint_count(a.normalized), lb = codepoint_count(b.normalized);
  if (la != lb) return la < lb;
  return a.normalized < b.normalized;
}

/// Index of the best-ranked hypothesis; the earliest wins complete ties.
inline std::size_t select_best(const std::vector<RescoredHypothesis>& hyps) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < hyps.size(); ++i)
    if (ranks_ahead(hyps[i], hyps[best])) best = i;
  return best;
}

/// LM scores for each hypothesis of a set, after normalization; OOV texts
/// get -inf.
struct LmScores {
  std::vector<std::string> normalized;
  std::vector<double> lm_logprob;
  std::vector<bool> oov;
};

inline LmScores lm_scores(const HypothesisSet& set, const LmCheckpoint& ck) {
  LmScores s;
  std::vector<std::vector<TokenId>> ids;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < set.hypotheses.size(); ++i) {
    s.normalized.push_back(normalize_text(set.hypotheses[i].text));
    s.lm_logprob.push_back(-std::numeric_limits<double>::infinity());
    s.oov.push_back(false);
    try {
      ids.push_back(encode(s.normalized.back(), ck.vocab));
      where.push_back(i);
    } catch (const OovError&) {
      s.oov.back() = true;
    }
  }
  const auto lps = sequence_logprobs(ck.params, ids, ck.vocab.sos_id());
  for (std::size_t k = 0; k < where.size(); ++k) s.lm_logprob[where[k]] = lps[k];
  return s;
}

/// Blends precomputed LM scores and selects. Exposed separately so a sweep
/// scores each hypothesis once.
inline RescoredSet rescore_with(const HypothesisSet& set, const LmScores& lm, double alpha) {
  check_alpha(alpha);
  if (set.hypotheses.empty()) throw DataError("utterance " + set.utterance_id + " has no hypotheses");
  if (lm.lm_logprob.size() != set.hypotheses.size()) throw UsageError("LM score count mismatch");
  RescoredSet out;
  out.utterance_id = set.utterance_id;
  out.reference = set.reference;
  for (std::size_t i = 0; i < set.hypotheses.size(); ++i) {
    const auto& h = set.hypotheses[i];
    RescoredHypothesis r{h.text, lm.normalized[i], h.asr_logprob, lm.lm_logprob[i],
                         blend_score(lm.lm_logprob[i], h.asr_logprob, alpha), {}};
    if (lm.oov[i]) r.flags.push_back("oov");
    out.hypotheses.push_back(std::move(r));
  }
  out.selected = select_best(out.hypotheses);
  if (out.winner().normalized.empty() && alpha > 0.0) out.flags.push_back("empty-winner");
  if (lm.oov[out.selected] && alpha > 0.0) out.flags.push_back("oov-winner");
  return out;
}

inline RescoredSet rescore_set(const HypothesisSet& set, const LmCheckpoint& ck, double alpha) {
  check_alpha(alpha);
  return rescore_with(set, lm_scores(set, ck), alpha);
}

struct Crossover {
  std::optional<double> alpha;
  bool always_tied = false;
};

/// The alpha in [0, 1) where two hypotheses' blended scores are equal, given
/// (asr, lm) for each. Scores are linear in alpha, so there is at most one.
inline Crossover crossover_alpha(double asr1, double lm1, double asr2, double lm2) {
  const double da = asr1 - asr2;
  const double dl = lm2 - lm1;
  if (da == 0.0 && dl == 0.0) return {std::nullopt, true};
  const double denom = da + dl;
  if (denom == 0.0) return {};
  const double a = da / denom;
  if (a >= 0.0 && a < 1.0) return {a, false};
  return {};
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepRow {
  double alpha;
  WerReport report;
};

/// Corpus WER of the selections at each alpha; the alpha = 0 row is the
/// plain ASR baseline.
inline std::vector<SweepRow> alpha_sweep(const std::vector<HypothesisSet>& sets,
                                         const LmCheckpoint& ck,
                                         const std::vector<double>& alphas = default_alphas()) {
  std::vector<std::string> missing;
  for (const auto& s : sets)
    if (!s.reference) missing.push_back(s.utterance_id);
  if (!missing.empty()) {
    std::string ids;
    for (const auto& id : missing) ids += (ids.empty() ? "" : ", ") + id;
    throw DataError("missing reference for: " + ids);
  }
  for (double a : alphas) check_alpha(a);
  std::vector<LmScores> scores;
  scores.reserve(sets.size());
  for (const auto& s : sets) scores.push_back(lm_scores(s, ck));
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    std::vector<UtterancePair> pairs;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      const RescoredSet r = rescore_with(sets[i], scores[i], a);
      pairs.push_back({sets[i].utterance_id, normalize_text(*sets[i].reference), r.winner().normalized});
    }
    rows.push_back({a, corpus_wer(pairs)});
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "alpha,wer,substitutions,deletions,insertions,ref_words\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu,%zu,%zu,%zu\n", r.alpha, r.report.wer(),
                  r.report.substitutions, r.report.deletions, r.report.insertions,
                  r.report.ref_words);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// JSON Lines I/O

/// Parses one N-best object; `where` prefixes error messages.
inline HypothesisSet parse_hypothesis_set(const nlohmann::json& j, const std::string& where) {
  auto fail = [&](const std::string& msg) { throw DataError(where + ": " + msg); };
  if (!j.is_object()) fail("expected a JSON object");
  HypothesisSet set;
  if (!j.contains("id") || !j["id"].is_string()) fail("\"id\" must be a string");
  set.utterance_id = j["id"].get<std::string>();
  if (j.contains("reference") && !j["reference"].is_null()) {
    if (!j["reference"].is_string()) fail("\"reference\" must be a string");
    set.reference = j["reference"].get<std::string>();
  }
  if (!j.contains("hypotheses") || !j["hypotheses"].is_array()) fail("\"hypotheses\" must be an array");
  for (const auto& h : j["hypotheses"]) {
    if (!h.is_object() || !h.contains("text") || !h["text"].is_string()) {
      fail("each hypothesis needs a string \"text\"");
    }
    if (!h.contains("asr_logprob") || !h["asr_logprob"].is_number()) {
      fail("each hypothesis needs a numeric \"asr_logprob\"");
    }
    const double lp = h["asr_logprob"].get<double>();
    if (!std::isfinite(lp)) fail("\"asr_logprob\" must be finite");
    set.hypotheses.push_back({h["text"].get<std::string>(), lp});
  }
  if (set.hypotheses.empty()) fail("\"hypotheses\" must not be empty");
  return set;
}

/// Reads a whole N-best JSONL stream. Blank lines are skipped; any malformed
/// line aborts with its line number.
inline std::vector<HypothesisSet> read_nbest(std::istream& in, const std::string& name = "nbest") {
  std::vector<HypothesisSet> sets;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": invalid JSON (" + e.what() + ")");
    }
    HypothesisSet set = parse_hypothesis_set(j, where);
    if (!ids.insert(set.utterance_id).second) {
      throw DataError(where + ": duplicate id \"" + set.utterance_id + "\"");
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

inline nlohmann::json to_json(const RescoredSet& r) {
  nlohmann::json j;
  j["id"] = r.utterance_id;
  if (r.reference) j["reference"] = *r.reference;
  j["hypotheses"] = nlohmann::json::array();
  for (const auto& h : r.hypotheses) {
    nlohmann::json hj{{"text", h.text}, {"asr_logprob", h.asr_logprob}};
    hj["lm_logprob"] = std::isfinite(h.lm_logprob) ? nlohmann::json(h.lm_logprob) : nlohmann::json();
    hj["score"] = std::isfinite(h.score) ? nlohmann::json(h.score) : nlohmann::json();
    if (!h.flags.empty()) hj["flags"] = h.flags;
    j["hypotheses"].push_back(std::move(hj));
  }
  j["selected"] = r.selected;
  j["flags"] = r.flags;
  return j;
}

}  // namespace clmr
