#pragma once

// Experiment drivers: data-fraction ablation, correlation of its results,
// and replicate WER comparisons.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "clmr/corpus.hpp"
#include "clmr/error.hpp"
#include "clmr/lm.hpp"
#include "clmr/rescore.hpp"
#include "clmr/scoring.hpp"
#include "clmr/stats.hpp"
#include "clmr/svg.hpp"

namespace clmr {

struct AblationRecord {
  double fraction = 1.0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  std::size_t train_words = 0;
  double val_perplexity = std::nan("");
  double wer = std::nan("");
  std::string status = "ok";  // "ok" or "failed: <reason>"

  bool ok() const { return status == "ok"; }
};

struct AblationOptions {
  double alpha = 0.25;
  std::uint64_t base_seed = 0;
  std::size_t jobs = 1;
  /// Cells already finished in an earlier run, reused verbatim.
  std::vector<AblationRecord> completed;
  std::function<void(const AblationRecord&)> on_record;
};

/// Trains one LM for one (fraction, repeat) cell and rescores the N-best
/// sets with it. Failures are captured in the record's status.
inline AblationRecord run_ablation_cell(const std::vector<std::string>& train_lines,
                                        const std::vector<std::string>& valid_lines,
                                        const std::vector<HypothesisSet>& nbest,
                                        const LmConfig& config, double fraction,
                                        std::size_t repeat, const AblationOptions& opt) {
  AblationRecord rec;
  rec.fraction = fraction;
  rec.repeat = repeat;
  rec.seed = opt.base_seed + repeat;
  try {
    const auto subset = subsample(train_lines, fraction, rec.seed);
    rec.train_words = corpus_stats(subset).words;
    LmConfig cfg = config;
    cfg.seed = rec.seed;
    const TrainResult tr = train(subset, valid_lines, cfg);
    rec.val_perplexity = tr.checkpoint.best_val_perplexity;
    const auto rows = alpha_sweep(nbest, tr.checkpoint, {opt.alpha});
    rec.wer = rows.front().report.wer();
  } catch (const std::exception& e) {
    rec.status = std::string("failed: ") + e.what();
  }
  return rec;
}

/// Runs every (fraction, repeat) cell with subsample seed base_seed + repeat
/// and returns records sorted by (fraction, repeat). Cells run on up to
/// `jobs` threads; each owns its RNG streams, so results do not depend on
/// scheduling.
inline std::vector<AblationRecord> run_ablation(const std::vector<std::string>& train_lines,
                                                const std::vector<std::string>& valid_lines,
                                                const std::vector<HypothesisSet>& nbest,
                                                const LmConfig& config,
                                                std::vector<double> fractions, std::size_t repeats,
                                                const AblationOptions& opt = {}) {
  for (double f : fractions) subsample_size(0, f);
  check_alpha(opt.alpha);
  for (const auto& s : nbest)
    if (!s.reference) throw DataError("utterance " + s.utterance_id + " lacks a reference");
  std::sort(fractions.begin(), fractions.end());
  fractions.erase(std::unique(fractions.begin(), fractions.end()), fractions.end());

  std::vector<AblationRecord> records;
  std::vector<std::size_t> todo;
  for (double f : fractions)
    for (std::size_t r = 0; r < repeats; ++r) {
      auto done = std::find_if(opt.completed.begin(), opt.completed.end(), [&](const auto& c) {
        return c.ok() && c.fraction == f && c.repeat == r && c.seed == opt.base_seed + r;
      });
      if (done != opt.completed.end()) {
        records.push_back(*done);
      } else {
        AblationRecord pending;
        pending.fraction = f;
        pending.repeat = r;
        todo.push_back(records.size());
        records.push_back(pending);
      }
    }

  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&]() {
    for (;;) {
      std::size_t idx;
      {
        std::lock_guard lock(mu);
        if (next == todo.size()) return;
        idx = todo[next++];
      }
      AblationRecord rec = run_ablation_cell(train_lines, valid_lines, nbest, config,
                                             records[idx].fraction, records[idx].repeat, opt);
      std::lock_guard lock(mu);
      records[idx] = rec;
      if (opt.on_record) opt.on_record(rec);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, todo.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return records;
}

namespace detail {
inline std::string fmt17(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c == '\n' ? ' ' : c);
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}
}  // namespace detail

inline constexpr const char* kAblationHeader =
    "fraction,repeat,seed,train_words,val_perplexity,wer,status";

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRecord>& records) {
  out << kAblationHeader << '\n';
  for (const auto& r : records) {
    out << detail::fmt17(r.fraction) << ',' << r.repeat << ',' << r.seed << ',' << r.train_words
        << ',' << detail::fmt17(r.val_perplexity) << ',' << detail::fmt17(r.wer) << ','
        << detail::csv_field(r.status) << '\n';
  }
}

inline std::vector<AblationRecord> read_ablation_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kAblationHeader) {
    throw DataError("ablation CSV must start with header: " + std::string(kAblationHeader));
  }
  std::vector<AblationRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 7) throw DataError("ablation CSV line " + std::to_string(lineno) + ": expected 7 fields");
    try {
      AblationRecord r;
      r.fraction = std::stod(f[0]);
      r.repeat = std::stoul(f[1]);
      r.seed = std::stoull(f[2]);
      r.train_words = std::stoul(f[3]);
      r.val_perplexity = f[4].empty() ? std::nan("") : std::stod(f[4]);
      r.wer = f[5].empty() ? std::nan("") : std::stod(f[5]);
      r.status = f[6];
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError("ablation CSV line " + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Correlation

struct AblationCorrelation {
  stats::TestResult words_vs_perplexity;
  stats::TestResult words_vs_wer;
  stats::TestResult perplexity_vs_wer;
};

/// Three Pearson tests over the successful records, Bonferroni-corrected for
/// three comparisons.
inline AblationCorrelation correlate_ablation(const std::vector<AblationRecord>& records) {
  std::vector<double> words, ppl, wer;
  for (const auto& r : records) {
    if (!r.ok()) continue;
    words.push_back(static_cast<double>(r.train_words));
    ppl.push_back(r.val_perplexity);
    wer.push_back(r.wer);
  }
  if (words.size() < 3) throw NumericError("correlation needs at least 3 successful records");
  auto test = [](const std::vector<double>& x, const std::vector<double>& y) {
    auto t = stats::pearson(x, y);
    t.corrected_p = stats::bonferroni(t.p_value, 3);
    return t;
  };
  return {test(words, ppl), test(words, wer), test(ppl, wer)};
}

/// CSVs for the three scatter panels: words/perplexity, words/WER,
/// perplexity/WER.
inline std::vector<std::pair<std::string, std::string>> ablation_scatter_csvs(
    const std::vector<AblationRecord>& records) {
  std::ostringstream a, b, c;
  a << "fraction,train_words,val_perplexity\n";
  b << "fraction,train_words,wer\n";
  c << "fraction,val_perplexity,wer\n";
  for (const auto& r : records) {
    if (!r.ok()) continue;
    const auto f = detail::fmt17(r.fraction);
    a << f << ',' << r.train_words << ',' << detail::fmt17(r.val_perplexity) << '\n';
    b << f << ',' << r.train_words << ',' << detail::fmt17(r.wer) << '\n';
    c << f << ',' << detail::fmt17(r.val_perplexity) << ',' << detail::fmt17(r.wer) << '\n';
  }
  return {{"words_vs_perplexity", a.str()}, {"words_vs_wer", b.str()}, {"perplexity_vs_wer", c.str()}};
}

inline std::string ablation_svg(const std::vector<AblationRecord>& records) {
  svg::ScatterPanel a{"words vs perplexity", "training words", "validation perplexity", {}};
  svg::ScatterPanel b{"words vs WER", "training words", "WER", {}};
  svg::ScatterPanel c{"perplexity vs WER", "validation perplexity", "WER", {}};
  for (const auto& r : records) {
    if (!r.ok()) continue;
    const double w = static_cast<double>(r.train_words);
    a.points.push_back({w, r.val_perplexity});
    b.points.push_back({w, r.wer});
    c.points.push_back({r.val_perplexity, r.wer});
  }
  return svg::scatter({a, b, c});
}

// ---------------------------------------------------------------------------
// Replicates

struct ReplicateGroup {
  std::string name;
  std::vector<double> wers;
};

struct ReplicateSummary {
  std::string group;
  double mean_wer;
  double sem;
  std::size_t n;
};

inline std::vector<ReplicateSummary> summarize_replicates(const std::vector<ReplicateGroup>& groups) {
  std::vector<ReplicateSummary> out;
  for (const auto& g : groups) {
    if (g.wers.empty()) throw DataError("replicate group " + g.name + " is empty");
    out.push_back({g.name, stats::mean(g.wers), g.wers.size() > 1 ? stats::sem(g.wers) : 0.0,
                   g.wers.size()});
  }
  return out;
}

/// Welch's t between two stochastic groups.
inline stats::TestResult compare_replicates(const ReplicateGroup& a, const ReplicateGroup& b) {
  return stats::welch_t(a.wers, b.wers);
}

/// One-sample t of a group against a deterministic baseline WER.
inline stats::TestResult compare_replicates(const ReplicateGroup& group, double baseline_wer) {
  return stats::one_sample_t(group.wers, baseline_wer);
}

inline void write_replicate_csv(std::ostream& out, const std::vector<ReplicateSummary>& rows) {
  out << "group,mean_wer,sem,n\n";
  for (const auto& r : rows) {
    out << detail::csv_field(r.group) << ',' << detail::fmt17(r.mean_wer) << ','
        << detail::fmt17(r.sem) << ',' << r.n << '\n';
  }
}

inline std::string replicate_svg(const std::vector<ReplicateSummary>& rows, const std::string& title) {
  svg::BarPanel panel{title, "WER", {}};
  for (const auto& r : rows) panel.bars.push_back({r.group, r.mean_wer, r.sem});
  return svg::bars(panel);
}

inline std::string sweep_svg(const std::vector<SweepRow>& rows) {
  svg::ScatterPanel p{"rescoring sweep", "alpha", "WER", {}, true};
  for (const auto& r : rows) p.points.push_back({r.alpha, r.report.wer()});
  return svg::scatter({p});
}

}  // namespace clmr
