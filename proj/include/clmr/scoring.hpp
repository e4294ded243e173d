#pragma once

#include <string>
#include <vector>

#include "clmr/corpus.hpp"
#include "clmr/error.hpp"
#include "clmr/lm.hpp"

namespace clmr {

struct ScoredString {
  std::string text;
  double lm_logprob = 0.0;  // nats
  std::size_t n_chars = 0;
};

/// log P_LM(text) with a single space prepended as the start symbol. The
/// start symbol contributes no term and no end-of-sequence term is added, so
/// the empty string scores 0.
inline ScoredString string_logprob(const std::string& text, const LmCheckpoint& ck) {
  const auto ids = encode(text, ck.vocab);
  const double lp = sequence_logprobs(ck.params, {ids}, ck.vocab.sos_id()).front();
  return {text, lp, ids.size()};
}

/// Element-wise string_logprob, batched. An OOV string aborts the whole call
/// with its index.
inline std::vector<ScoredString> batch_logprob(const std::vector<std::string>& texts,
                                               const LmCheckpoint& ck) {
  std::vector<std::vector<TokenId>> ids;
  ids.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    try {
      ids.push_back(encode(texts[i], ck.vocab));
    } catch (const OovError& e) {
      throw DataError("string " + std::to_string(i) + ": " + e.what());
    }
  }
  const auto lps = sequence_logprobs(ck.params, ids, ck.vocab.sos_id());
  std::vector<ScoredString> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) out.push_back({texts[i], lps[i], ids[i].size()});
  return out;
}

/// Per-character perplexity of normalized lines under the checkpoint.
inline double perplexity(const std::vector<std::string>& lines, const LmCheckpoint& ck) {
  std::vector<std::vector<TokenId>> ids;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      ids.push_back(encode(lines[i], ck.vocab));
    } catch (const OovError& e) {
      throw DataError("line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return perplexity_of(ck.params, ids, ck.vocab.sos_id());
}

}  // namespace clmr
