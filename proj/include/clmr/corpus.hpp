#pragma once

// Text normalization, character vocabularies, encoding, chunking and
// line-level subsampling of a one-sentence-per-line corpus.

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "clmr/error.hpp"
#include "clmr/random.hpp"

namespace clmr {

using TokenId = std::int32_t;

/// The Hawaiian glottal stop letter, U+02BB MODIFIER LETTER TURNED COMMA.
inline constexpr char32_t kOkina = 0x02BB;
inline constexpr char32_t kSpace = U' ';

// ---------------------------------------------------------------------------
// UTF-8 <-> codepoints

inline std::u32string utf8_to_u32(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  const auto* p = reinterpret_cast<const std::uint8_t*>(s.data());
  const std::int32_t n = static_cast<std::int32_t>(s.size());
  std::int32_t i = 0;
  while (i < n) {
    UChar32 c;
    U8_NEXT(p, i, n, c);
    out.push_back(c < 0 ? char32_t{0xFFFD} : static_cast<char32_t>(c));
  }
  return out;
}

inline std::string u32_to_utf8(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t c : s) {
    std::uint8_t buf[4];
    std::int32_t len = 0;
    UBool err = false;
    U8_APPEND(buf, len, 4, static_cast<UChar32>(c), err);
    if (err) {
      out += "\xEF\xBF\xBD";
    } else {
      out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(len));
    }
  }
  return out;
}

inline std::string codepoint_utf8(char32_t c) { return u32_to_utf8(std::u32string(1, c)); }

inline std::size_t codepoint_count(std::string_view s) { return utf8_to_u32(s).size(); }

// ---------------------------------------------------------------------------
// Normalization

namespace detail {

inline std::string nfc(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorKind::data, "ICU NFC normalizer unavailable");
  icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<std::int32_t>(s.size())));
  icu::UnicodeString dst = n->normalize(src, status);
  if (U_FAILURE(status)) throw DataError("NFC normalization failed");
  std::string out;
  dst.toUTF8String(out);
  return out;
}

inline bool is_punct_or_symbol(char32_t c) {
  const auto mask = U_GET_GC_MASK(static_cast<UChar32>(c));
  return (mask & (U_GC_P_MASK | U_GC_S_MASK)) != 0;
}

/// Replaces every balanced (...) or [...] span with a space. Transcripts use
/// these for non-speech annotations such as "(laughter)". Unmatched brackets
/// are left for the punctuation filter.
inline std::u32string drop_annotations(const std::u32string& in) {
  std::vector<bool> drop(in.size(), false);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const char32_t c = in[i];
    if (c == U'(' || c == U'[') {
      stack.push_back(i);
    } else if ((c == U')' || c == U']') && !stack.empty()) {
      const char32_t open = in[stack.back()];
      if ((open == U'(' && c == U')') || (open == U'[' && c == U']')) {
        const std::size_t begin = stack.back();
        stack.pop_back();
        if (stack.empty()) std::fill(drop.begin() + static_cast<std::ptrdiff_t>(begin),
                                     drop.begin() + static_cast<std::ptrdiff_t>(i) + 1, true);
      } else {
        stack.clear();
      }
    }
  }
  std::u32string out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!drop[i]) {
      out.push_back(in[i]);
    } else if (i == 0 || !drop[i - 1]) {
      out.push_back(kSpace);
    }
  }
  return out;
}

}  // namespace detail

/// Lowercase, ʻokina-preserving, punctuation-free form used for LM training,
/// scoring and WER.
///
/// Steps: NFC; bracketed annotations removed; grave accent and right single quote become ʻokina; simple
/// lowercase; drop every other punctuation or symbol codepoint; collapse
/// whitespace runs to one space; trim; NFC again (deleting a symbol can bring
/// a base letter next to a combining mark).
inline std::string normalize_text(std::string_view raw) {
  std::u32string in = detail::drop_annotations(utf8_to_u32(detail::nfc(raw)));
  std::u32string out;
  out.reserve(in.size());
  bool pending_space = false;
  for (char32_t c : in) {
    if (c == 0x0060 || c == 0x2019) c = kOkina;
    if (u_isUWhiteSpace(static_cast<UChar32>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (detail::is_punct_or_symbol(c)) continue;
    c = static_cast<char32_t>(u_tolower(static_cast<UChar32>(c)));
    if (pending_space) {
      out.push_back(kSpace);
      pending_space = false;
    }
    out.push_back(c);
  }
  return detail::nfc(u32_to_utf8(out));
}

// ---------------------------------------------------------------------------
// Vocabulary

/// Ordered character inventory. Id 0 is always the space character, which
/// doubles as the start-of-sequence symbol; the rest follow in ascending
/// codepoint order.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<char32_t>{}) {}

  /// Builds from any codepoint set; the space is injected and order fixed.
  explicit Vocabulary(std::vector<char32_t> chars) {
    chars.push_back(kSpace);
    std::sort(chars.begin(), chars.end());
    chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
    std::stable_partition(chars.begin(), chars.end(), [](char32_t c) { return c == kSpace; });
    chars_ = std::move(chars);
    for (std::size_t i = 0; i < chars_.size(); ++i) index_.emplace(chars_[i], static_cast<TokenId>(i));
  }

  /// Takes the id order verbatim (as read from a vocabulary file).
  static Vocabulary from_ordered(const std::vector<char32_t>& chars) {
    Vocabulary v;
    v.chars_.clear();
    v.index_.clear();
    for (char32_t c : chars) {
      if (!v.index_.emplace(c, static_cast<TokenId>(v.chars_.size())).second) {
        throw DataError("duplicate vocabulary entry U+" + hex(c));
      }
      v.chars_.push_back(c);
    }
    if (!v.contains(kSpace)) throw DataError("vocabulary lacks the space character");
    return v;
  }

  std::size_t size() const noexcept { return chars_.size(); }
  const std::vector<char32_t>& chars() const noexcept { return chars_; }
  char32_t at(TokenId id) const { return chars_.at(static_cast<std::size_t>(id)); }
  bool contains(char32_t c) const { return index_.count(c) != 0; }

  TokenId id(char32_t c) const {
    auto it = index_.find(c);
    if (it == index_.end()) throw OovError(c, 0);
    return it->second;
  }

  TokenId sos_id() const { return id(kSpace); }

  bool operator==(const Vocabulary& o) const { return chars_ == o.chars_; }

 private:
  static std::string hex(char32_t c) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04X", static_cast<unsigned>(c));
    return buf;
  }

  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, TokenId> index_;
};

inline Vocabulary build_vocab(const std::vector<std::string>& lines) {
  std::vector<char32_t> seen;
  bool any = false;
  for (const auto& line : lines) {
    for (char32_t c : utf8_to_u32(line)) {
      seen.push_back(c);
      any = true;
    }
  }
  if (!any) throw DataError("empty corpus");
  return Vocabulary(std::move(seen));
}

inline std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab) {
  std::u32string cps = utf8_to_u32(text);
  std::vector<TokenId> ids;
  ids.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (!vocab.contains(cps[i])) throw OovError(cps[i], i);
    ids.push_back(vocab.id(cps[i]));
  }
  return ids;
}

inline std::string decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::u32string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw DataError("token id " + std::to_string(id) + " out of range");
    }
    out.push_back(vocab.at(id));
  }
  return u32_to_utf8(out);
}

// ---------------------------------------------------------------------------
// Chunking, subsampling, statistics

using Chunk = std::vector<TokenId>;

/// Greedy per-line split into pieces of at most max_len ids. Empty lines
/// contribute nothing and no chunk crosses a line boundary.
inline std::vector<Chunk> chunk_corpus(const std::vector<std::vector<TokenId>>& lines,
                                       std::size_t max_len = 100) {
  if (max_len == 0) throw UsageError("max_len must be positive");
  std::vector<Chunk> chunks;
  for (const auto& line : lines) {
    for (std::size_t begin = 0; begin < line.size(); begin += max_len) {
      const std::size_t end = std::min(line.size(), begin + max_len);
      chunks.emplace_back(line.begin() + static_cast<std::ptrdiff_t>(begin),
                          line.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return chunks;
}

/// Number of lines kept by subsample().
inline std::size_t subsample_size(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw UsageError("subsample fraction must lie in (0, 1]");
  }
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
}

/// Uniform sample of floor(n * fraction) lines without replacement, in
/// original order. The sample is a prefix of one seeded permutation, so for a
/// fixed seed smaller fractions give nested subsets.
template <typename T>
std::vector<T> subsample(const std::vector<T>& lines, double fraction, std::uint64_t seed) {
  const std::size_t k = subsample_size(lines.size(), fraction);
  std::vector<std::size_t> order(lines.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);
  order.resize(k);
  std::sort(order.begin(), order.end());
  std::vector<T> out;
  out.reserve(k);
  for (std::size_t i : order) out.push_back(lines[i]);
  return out;
}

struct CorpusStats {
  std::size_t lines = 0;
  std::size_t words = 0;
  std::size_t chars = 0;
  bool operator==(const CorpusStats&) const = default;
};

inline CorpusStats corpus_stats(const std::vector<std::string>& lines) {
  CorpusStats s;
  s.lines = lines.size();
  for (const auto& line : lines) {
    bool in_word = false;
    for (char32_t c : utf8_to_u32(line)) {
      if (c == U'\n' || c == U'\r') continue;
      ++s.chars;
      const bool space = u_isUWhiteSpace(static_cast<UChar32>(c));
      if (!space && !in_word) ++s.words;
      in_word = !space;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Files

/// Reads an LF-terminated UTF-8 corpus; a trailing CR is stripped.
inline std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_lines(in);
}

inline std::vector<std::string> normalize_lines(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  out.reserve(raw.size());
  for (const auto& l : raw) out.push_back(normalize_text(l));
  return out;
}

inline void write_vocab(std::ostream& out, const Vocabulary& vocab) {
  for (char32_t c : vocab.chars()) out << codepoint_utf8(c) << '\n';
}

/// One codepoint per line in id order. The space entry is a line holding a
/// single space.
inline Vocabulary read_vocab(std::istream& in) {
  std::vector<char32_t> chars;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::u32string cps = utf8_to_u32(line);
    if (cps.size() != 1) {
      throw DataError("vocabulary line " + std::to_string(lineno) + " must hold exactly one codepoint");
    }
    chars.push_back(cps[0]);
  }
  return Vocabulary::from_ordered(chars);
}

}  // namespace clmr
