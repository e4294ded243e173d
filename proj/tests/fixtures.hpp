#pragma once

// Shared test fixtures and independent oracles.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "clmr/clmr.hpp"

namespace clmr::testing {

/// Untrained model over `chars` with all weights zero, i.e. uniform output.
inline LmCheckpoint zero_model(const std::vector<char32_t>& chars, std::size_t hidden = 4,
                               std::size_t layers = 1) {
  LmCheckpoint ck;
  ck.vocab = Vocabulary(chars);
  ck.config.vocab_size = ck.vocab.size();
  ck.config.hidden_size = hidden;
  ck.config.num_layers = layers;
  std::vector<Tensor> ts;
  for (const auto& s : parameter_shapes(ck.config)) ts.push_back(Tensor::zeros(s, true));
  ck.params = assemble_parameters(ck.config, std::move(ts));
  ck.best_val_perplexity = static_cast<double>(ck.vocab.size());
  ck.epoch_of_best = 0;
  return ck;
}

/// Randomly initialized (untrained) model.
inline LmCheckpoint random_model(const std::vector<char32_t>& chars, std::size_t hidden,
                                 std::size_t layers, std::uint64_t seed) {
  LmCheckpoint ck;
  ck.vocab = Vocabulary(chars);
  ck.config.vocab_size = ck.vocab.size();
  ck.config.hidden_size = hidden;
  ck.config.num_layers = layers;
  ck.config.seed = seed;
  ck.params = init_params(ck.config);
  // Perturb biases too so nothing is trivially symmetric.
  Rng rng(seed + 99);
  for (auto t : ck.params.tensors())
    for (double& v : t.storage()) v += uniform(rng, -0.3, 0.3);
  ck.best_val_perplexity = 1.5;
  ck.epoch_of_best = 1;
  return ck;
}

/// Order-1 Markov chain over four symbols.
struct MarkovChain {
  std::array<char, 4> symbols{'a', 'b', 'c', 'd'};
  std::array<std::array<double, 4>, 4> p{{{0.70, 0.10, 0.10, 0.10},
                                          {0.10, 0.70, 0.10, 0.10},
                                          {0.05, 0.05, 0.10, 0.80},
                                          {0.25, 0.25, 0.25, 0.25}}};

  std::array<double, 4> stationary() const {
    std::array<double, 4> pi{0.25, 0.25, 0.25, 0.25};
    for (int it = 0; it < 10000; ++it) {
      std::array<double, 4> next{};
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) next[j] += pi[i] * p[i][j];
      pi = next;
    }
    return pi;
  }

  /// H = -sum_i pi_i sum_j P_ij ln P_ij, in nats.
  double entropy_rate() const {
    const auto pi = stationary();
    double h = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) h -= pi[i] * p[i][j] * std::log(p[i][j]);
    return h;
  }

  /// Lines of `len` symbols continuing one trajectory started from the
  /// stationary distribution.
  std::vector<std::string> sample_lines(std::size_t lines, std::size_t len, std::uint64_t seed) const {
    Rng rng(seed);
    const auto pi = stationary();
    auto draw = [&](const std::array<double, 4>& dist) {
      double u = uniform01(rng), acc = 0.0;
      for (int j = 0; j < 4; ++j) {
        acc += dist[j];
        if (u < acc) return j;
      }
      return 3;
    };
    int state = draw(pi);
    std::vector<std::string> out;
    for (std::size_t l = 0; l < lines; ++l) {
      std::string s;
      for (std::size_t k = 0; k < len; ++k) {
        s.push_back(symbols[state]);
        state = draw(p[state]);
      }
      out.push_back(std::move(s));
    }
    return out;
  }
};

/// The learnability corpus: `lines` lines of "ab" repeated `reps` times.
inline std::vector<std::string> alternation_corpus(std::size_t lines = 1000, std::size_t reps = 40) {
  std::string line;
  for (std::size_t i = 0; i < reps; ++i) line += "ab";
  return std::vector<std::string>(lines, line);
}

/// Max over elements of |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), floor});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

/// Minimal edit count found by walking every alignment path (no memo).
template <typename T>
std::size_t brute_force_edits(const std::vector<T>& a, const std::vector<T>& b, std::size_t i = 0,
                              std::size_t j = 0) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t diag = brute_force_edits(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
  const std::size_t drop = brute_force_edits(a, b, i + 1, j) + 1;
  const std::size_t add = brute_force_edits(a, b, i, j + 1) + 1;
  return std::min({diag, drop, add});
}

/// All word sequences of length <= max_len over `alphabet`.
inline std::vector<std::vector<std::string>> all_sequences(const std::vector<std::string>& alphabet,
                                                           std::size_t max_len) {
  std::vector<std::vector<std::string>> out{{}};
  std::vector<std::vector<std::string>> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::vector<std::string>> next;
    for (const auto& s : frontier)
      for (const auto& w : alphabet) {
        next.push_back(s);
        next.back().push_back(w);
      }
    out.insert(out.end(), next.begin(), next.end());
    frontier.swap(next);
  }
  return out;
}

inline std::string join_words(const std::vector<std::string>& ws) {
  std::string s;
  for (const auto& w : ws) s += (s.empty() ? "" : " ") + w;
  return s;
}

/// Levenshtein distance over codepoints with two rolling rows.
inline std::size_t two_row_levenshtein(const std::u32string& a, const std::u32string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0u : 1u)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace clmr::testing
