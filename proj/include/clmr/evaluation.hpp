#pragma once

// Word error rate, character-level edit scripts, and test-set filtering.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "clmr/corpus.hpp"
#include "clmr/error.hpp"

namespace clmr {

/// Splits normalized text on single spaces.
inline std::vector<std::string> word_tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find(' ', start);
    if (end == std::string_view::npos) end = text.size();
    if (end > start) words.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  return words;
}

enum class EditOp { match, substitution, deletion, insertion };

inline const char* to_string(EditOp op) {
  switch (op) {
    case EditOp::match: return "match";
    case EditOp::substitution: return "substitution";
    case EditOp::deletion: return "deletion";
    case EditOp::insertion: return "insertion";
  }
  return "?";
}

/// Minimal unit-cost alignment turning `source` into `target`. Deletion drops
/// a source item, insertion adds a target item. The backtrace runs from the
/// end and prefers match, then substitution, deletion, insertion.
template <typename T>
std::vector<EditOp> align(const std::vector<T>& source, const std::vector<T>& target) {
  const std::size_t n = source.size(), m = target.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (source[i - 1] == target[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  std::vector<EditOp> ops;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && source[i - 1] == target[j - 1] && at(i, j) == at(i - 1, j - 1)) {
      ops.push_back(EditOp::match);
      --i, --j;
    } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
      ops.push_back(EditOp::substitution);
      --i, --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ops.push_back(EditOp::deletion);
      --i;
    } else {
      ops.push_back(EditOp::insertion);
      --j;
    }
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

// ---------------------------------------------------------------------------
// WER

struct WerReport {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_words = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  double wer() const {
    return ref_words == 0 ? 0.0 : static_cast<double>(errors()) / static_cast<double>(ref_words);
  }

  WerReport& operator+=(const WerReport& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    ref_words += o.ref_words;
    return *this;
  }
  bool operator==(const WerReport&) const = default;
};

/// Word-level errors of `hypothesis` against `reference`, both normalized.
/// A deletion is a reference word missing from the hypothesis.
inline WerReport wer(std::string_view reference, std::string_view hypothesis) {
  const auto ref = word_tokenize(reference);
  const auto hyp = word_tokenize(hypothesis);
  if (ref.empty() && !hyp.empty()) throw DataError("undefined WER (zero reference words)");
  WerReport r;
  r.ref_words = ref.size();
  for (EditOp op : align(ref, hyp)) {
    if (op == EditOp::substitution) ++r.substitutions;
    else if (op == EditOp::deletion) ++r.deletions;
    else if (op == EditOp::insertion) ++r.insertions;
  }
  return r;
}

struct UtterancePair {
  std::string id;
  std::string reference;
  std::string hypothesis;
};

/// Pooled counts: sum of errors over sum of reference words.
inline WerReport corpus_wer(const std::vector<UtterancePair>& pairs) {
  std::vector<std::string> empty;
  for (const auto& p : pairs)
    if (word_tokenize(p.reference).empty()) empty.push_back(p.id);
  if (!empty.empty()) {
    std::string ids;
    for (const auto& id : empty) ids += (ids.empty() ? "" : ", ") + id;
    throw DataError("empty reference for: " + ids);
  }
  WerReport total;
  for (const auto& p : pairs) total += wer(p.reference, p.hypothesis);
  return total;
}

// ---------------------------------------------------------------------------
// Character edit scripts

/// One run of equally tagged alignment columns. `hyp` holds the hypothesis
/// characters consumed and `ref` the reference characters produced.
struct EditSpan {
  EditOp op;
  std::string hyp;
  std::string ref;
  bool operator==(const EditSpan&) const = default;
};

/// Edits that turn the hypothesis into the reference: a deletion removes
/// hypothesis characters, an insertion adds reference characters.
struct EditScript {
  std::vector<EditSpan> spans;

  std::size_t cost() const {
    std::size_t c = 0;
    for (const auto& s : spans) {
      if (s.op == EditOp::match) continue;
      c += std::max(codepoint_count(s.hyp), codepoint_count(s.ref));
    }
    return c;
  }

  std::string apply_to_hypothesis() const {
    std::string out;
    for (const auto& s : spans) out += s.ref;
    return out;
  }

  std::string reconstruct_hypothesis() const {
    std::string out;
    for (const auto& s : spans) out += s.hyp;
    return out;
  }
};

inline EditScript char_alignment(std::string_view reference, std::string_view hypothesis) {
  const std::u32string ref32 = utf8_to_u32(reference);
  const std::u32string hyp32 = utf8_to_u32(hypothesis);
  const std::vector<char32_t> ref(ref32.begin(), ref32.end());
  const std::vector<char32_t> hyp(hyp32.begin(), hyp32.end());
  EditScript script;
  std::size_t i = 0, j = 0;
  for (EditOp op : align(hyp, ref)) {
    std::u32string h, r;
    if (op != EditOp::insertion) h.push_back(hyp[i++]);
    if (op != EditOp::deletion) r.push_back(ref[j++]);
    if (!script.spans.empty() && script.spans.back().op == op) {
      script.spans.back().hyp += u32_to_utf8(h);
      script.spans.back().ref += u32_to_utf8(r);
    } else {
      script.spans.push_back({op, u32_to_utf8(h), u32_to_utf8(r)});
    }
  }
  return script;
}

/// Plain text with `[DEL:x]`, `[SUB:a→b]`, `[INS:y]` tags around edits.
inline std::string render_text(const EditScript& s) {
  std::string out;
  for (const auto& sp : s.spans) {
    switch (sp.op) {
      case EditOp::match: out += sp.hyp; break;
      case EditOp::deletion: out += "[DEL:" + sp.hyp + "]"; break;
      case EditOp::insertion: out += "[INS:" + sp.ref + "]"; break;
      case EditOp::substitution: out += "[SUB:" + sp.hyp + "→" + sp.ref + "]"; break;
    }
  }
  return out;
}

inline std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Two HTML fragments, hypothesis side and reference side. Deletions are
/// marked on the hypothesis (red), insertions on the reference (green), and
/// substitutions on both (yellow).
struct HtmlDiff {
  std::string hypothesis;
  std::string reference;
};

inline HtmlDiff render_html(const EditScript& s) {
  HtmlDiff out;
  auto mark = [](const char* cls, const std::string& text) {
    return std::string("<span class=\"") + cls + "\">" + html_escape(text) + "</span>";
  };
  for (const auto& sp : s.spans) {
    switch (sp.op) {
      case EditOp::match:
        out.hypothesis += html_escape(sp.hyp);
        out.reference += html_escape(sp.ref);
        break;
      case EditOp::deletion: out.hypothesis += mark("del", sp.hyp); break;
      case EditOp::insertion: out.reference += mark("ins", sp.ref); break;
      case EditOp::substitution:
        out.hypothesis += mark("sub", sp.hyp);
        out.reference += mark("sub", sp.ref);
        break;
    }
  }
  return out;
}

inline constexpr const char* kDiffCss =
    ".del{background:#f4a6a6}.sub{background:#f7e479}.ins{background:#a8e6a1}";

// ---------------------------------------------------------------------------
// Test-set filtering

struct TestPair {
  std::string id;
  std::string reference;
  std::optional<double> duration;  // seconds, metadata only
};

inline constexpr double kMaxAudioSeconds = 30.0;

struct FilteredPair {
  TestPair pair;
  std::string normalized_reference;
  std::vector<std::string> flags;    // kept pairs, e.g. "exceeds-30s"
  std::string reason;                // discarded pairs
};

struct FilterResult {
  std::vector<FilteredPair> kept;
  std::vector<FilteredPair> discarded;
};

/// Drops pairs whose reference normalizes to nothing and flags audio longer
/// than the recognizer's 30 s input window. Audio/text discrepancies need a
/// human; every kept pair is listed for that review by the caller.
inline FilterResult filter_testset(const std::vector<TestPair>& pairs) {
  FilterResult r;
  for (const auto& p : pairs) {
    FilteredPair fp{p, normalize_text(p.reference), {}, {}};
    if (fp.normalized_reference.empty()) {
      fp.reason = "empty-after-normalization";
      r.discarded.push_back(std::move(fp));
      continue;
    }
    if (p.duration && *p.duration > kMaxAudioSeconds) fp.flags.push_back("exceeds-30s");
    r.kept.push_back(std::move(fp));
  }
  return r;
}

}  // namespace clmr
