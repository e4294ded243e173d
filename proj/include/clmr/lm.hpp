#pragma once

// Character-level stacked LSTM language model: parameters, forward pass,
// Adam with gradient clipping, validation-perplexity checkpointing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "clmr/corpus.hpp"
#include "clmr/error.hpp"
#include "clmr/random.hpp"
#include "clmr/tensor.hpp"

namespace clmr {

/// How max_epochs is read: optimizer steps (default) or full passes.
enum class EpochMode { steps, passes };
/// Global L2-norm rescaling (default) or per-element clamping.
enum class ClipMode { norm, value };

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_size = 200;
  std::size_t num_layers = 3;
  double dropout = 0.2;
  double learning_rate = 0.001;
  std::size_t batch_size = 256;
  double clip = 1.0;
  std::size_t max_seq_len = 100;
  std::size_t max_epochs = 10000;
  std::uint64_t seed = 0;
  EpochMode epoch_mode = EpochMode::steps;
  ClipMode clip_mode = ClipMode::norm;
  /// Validation cadence in steps mode; passes mode validates every pass.
  std::size_t eval_every = 100;

  void validate() const {
    if (vocab_size == 0 || hidden_size == 0 || num_layers == 0 || batch_size == 0 ||
        max_seq_len == 0 || max_epochs == 0 || eval_every == 0) {
      throw UsageError("LM config sizes must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("dropout must lie in [0, 1)");
    if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
    if (!(clip > 0.0)) throw UsageError("clip must be positive");
  }

  bool operator==(const LmConfig&) const = default;
};

inline const char* to_string(EpochMode m) { return m == EpochMode::steps ? "steps" : "passes"; }
inline const char* to_string(ClipMode m) { return m == ClipMode::norm ? "norm" : "value"; }

/// Gates are stacked [input; forget; cell; output] along the 4H rows.
struct LstmLayer {
  Tensor w;     // [4H x in]
  Tensor u;     // [4H x H]
  Tensor bias;  // [4H]
};

struct LmParameters {
  std::vector<LstmLayer> layers;
  Tensor w_out;  // [V x H]
  Tensor b_out;  // [V]

  /// Serialization order: layer 1..L (W, U, b), then W_out, b_out.
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& l : layers) {
      out.push_back(l.w);
      out.push_back(l.u);
      out.push_back(l.bias);
    }
    out.push_back(w_out);
    out.push_back(b_out);
    return out;
  }

  LmParameters clone() const {
    LmParameters p;
    for (const auto& l : layers) p.layers.push_back({l.w.clone(), l.u.clone(), l.bias.clone()});
    p.w_out = w_out.clone();
    p.b_out = b_out.clone();
    return p;
  }

  void zero_grad() {
    for (auto& t : tensors()) t.zero_grad();
  }
};

/// Shapes in serialization order for a given config.
inline std::vector<Shape> parameter_shapes(const LmConfig& cfg) {
  const std::size_t h = cfg.hidden_size, v = cfg.vocab_size;
  std::vector<Shape> shapes;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    shapes.push_back({4 * h, l == 0 ? v : h});
    shapes.push_back({4 * h, h});
    shapes.push_back({4 * h});
  }
  shapes.push_back({v, h});
  shapes.push_back({v});
  return shapes;
}

/// Assembles parameters from tensors in serialization order.
inline LmParameters assemble_parameters(const LmConfig& cfg, std::vector<Tensor> ts) {
  const auto shapes = parameter_shapes(cfg);
  if (ts.size() != shapes.size()) throw ShapeError("wrong number of parameter tensors");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i].shape() != shapes[i]) {
      throw ShapeError("parameter " + std::to_string(i) + " has shape " +
                       shape_str(ts[i].shape()) + ", expected " + shape_str(shapes[i]));
    }
  }
  LmParameters p;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    p.layers.push_back({ts[3 * l], ts[3 * l + 1], ts[3 * l + 2]});
  }
  p.w_out = ts[3 * cfg.num_layers];
  p.b_out = ts[3 * cfg.num_layers + 1];
  return p;
}

/// Weights ~ U(-1/sqrt(H), 1/sqrt(H)); biases zero except the forget-gate
/// slice, which starts at 1.
inline LmParameters init_params(const LmConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const double k = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size));
  const std::size_t h = cfg.hidden_size;
  std::vector<Tensor> ts;
  const auto shapes = parameter_shapes(cfg);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const bool is_bias = shapes[i].size() == 1;
    std::vector<double> vals(shape_size(shapes[i]), 0.0);
    if (!is_bias) {
      for (double& x : vals) x = uniform(rng, -k, k);
    } else if (i < 3 * cfg.num_layers) {
      for (std::size_t r = h; r < 2 * h; ++r) vals[r] = 1.0;
    }
    ts.emplace_back(shapes[i], std::move(vals), true);
  }
  return assemble_parameters(cfg, std::move(ts));
}

/// One LSTM step for a batch of rows: x [B x in], h_prev and c_prev [B x H].
inline std::pair<Tensor, Tensor> lstm_cell_forward(const Tensor& x, const Tensor& h_prev,
                                                   const Tensor& c_prev, const LstmLayer& layer) {
  const std::size_t h = layer.u.dim(1);
  if (layer.w.dim(0) != 4 * h || layer.u.dim(0) != 4 * h || layer.bias.dim(0) != 4 * h) {
    throw ShapeError("lstm_cell_forward: inconsistent layer shapes");
  }
  Tensor gates = add(add(matmul_transposed(x, layer.w), matmul_transposed(h_prev, layer.u)),
                     layer.bias);
  Tensor i = sigmoid(slice(gates, 0, h));
  Tensor f = sigmoid(slice(gates, h, 2 * h));
  Tensor g = tanh(slice(gates, 2 * h, 3 * h));
  Tensor o = sigmoid(slice(gates, 3 * h, 4 * h));
  Tensor c = add(mul(f, c_prev), mul(i, g));
  Tensor hn = mul(o, tanh(c));
  return {hn, c};
}

enum class Mode { train, eval };

/// Draws inverted-dropout masks (entries 0 or 1/(1-p)) from a seeded stream.
class DropoutSource {
 public:
  explicit DropoutSource(std::uint64_t seed) : rng_(seed) {}

  Tensor mask(Shape shape, double p) {
    const double keep = 1.0 - p;
    std::vector<double> m(shape_size(shape));
    for (double& x : m) x = uniform01(rng_) < keep ? 1.0 / keep : 0.0;
    return Tensor(std::move(shape), std::move(m));
  }

 private:
  Rng rng_;
};

/// Input id sequences for one batch; rows may differ in length.
using IdBatch = std::vector<std::vector<TokenId>>;

inline std::size_t max_length(const IdBatch& batch) {
  std::size_t t = 0;
  for (const auto& row : batch) t = std::max(t, row.size());
  return t;
}

/// Logits for every (time, row) pair, row index t * B + b. Rows shorter than
/// the batch maximum are padded with id 0; those outputs are meaningless and
/// never influence other rows. Hidden state starts at zero.
inline Tensor forward_time_major(const LmParameters& params, const IdBatch& batch, Mode mode,
                                 double dropout_p, DropoutSource* dropout) {
  const std::size_t b = batch.size();
  const std::size_t steps = max_length(batch);
  const std::size_t v = params.w_out.dim(0);
  const std::size_t h = params.w_out.dim(1);
  if (b == 0 || steps == 0) throw DataError("forward: empty batch");
  for (const auto& row : batch)
    for (TokenId id : row)
      if (id < 0 || static_cast<std::size_t>(id) >= v) {
        throw DataError("forward: token id " + std::to_string(id) + " out of range");
      }
  const bool drop = mode == Mode::train && dropout_p > 0.0;
  if (drop && dropout == nullptr) throw UsageError("forward: train mode needs a dropout source");

  std::vector<Tensor> hs(params.layers.size(), Tensor::zeros({b, h}));
  std::vector<Tensor> cs(params.layers.size(), Tensor::zeros({b, h}));
  std::vector<Tensor> tops;
  tops.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> onehot(b * v, 0.0);
    for (std::size_t r = 0; r < b; ++r) {
      const TokenId id = t < batch[r].size() ? batch[r][t] : 0;
      onehot[r * v + static_cast<std::size_t>(id)] = 1.0;
    }
    Tensor x({b, v}, std::move(onehot));
    if (drop) x = mul(x, dropout->mask({b, v}, dropout_p));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      auto [hn, cn] = lstm_cell_forward(x, hs[l], cs[l], params.layers[l]);
      hs[l] = hn;
      cs[l] = cn;
      x = drop ? mul(hn, dropout->mask({b, h}, dropout_p)) : hn;
    }
    tops.push_back(x);
  }
  Tensor stacked = tops.size() == 1 ? tops[0] : concat_rows(tops);
  return add(matmul_transposed(stacked, params.w_out), params.b_out);
}

/// Logits shaped [batch, seq_len, V].
inline Tensor forward(const LmParameters& params, const IdBatch& batch, Mode mode,
                      double dropout_p = 0.0, DropoutSource* dropout = nullptr) {
  Tensor tm = forward_time_major(params, batch, mode, dropout_p, dropout);
  const std::size_t b = batch.size(), steps = max_length(batch), v = params.w_out.dim(0);
  std::vector<std::size_t> perm(b * steps);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t t = 0; t < steps; ++t) perm[r * steps + t] = t * b + r;
  return reshape(permute_rows(tm, perm), {b, steps, v});
}

/// Next-character training pair for one chunk: inputs are SOS followed by all
/// but the last id, targets are the chunk itself.
inline std::pair<std::vector<TokenId>, std::vector<TokenId>> make_example(const Chunk& chunk,
                                                                          TokenId sos) {
  std::vector<TokenId> in;
  in.reserve(chunk.size());
  in.push_back(sos);
  in.insert(in.end(), chunk.begin(), chunk.end() - 1);
  return {std::move(in), chunk};
}

/// Mean masked cross-entropy of a batch of chunks.
inline Tensor batch_loss(const LmParameters& params, const std::vector<Chunk>& chunks, TokenId sos,
                         Mode mode, double dropout_p, DropoutSource* dropout) {
  IdBatch inputs;
  IdBatch targets;
  for (const auto& c : chunks) {
    auto [in, tg] = make_example(c, sos);
    inputs.push_back(std::move(in));
    targets.push_back(std::move(tg));
  }
  Tensor logits = forward_time_major(params, inputs, mode, dropout_p, dropout);
  const std::size_t b = chunks.size(), steps = max_length(inputs);
  std::vector<std::int32_t> flat(b * steps, kIgnoreTarget);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t t = 0; t < targets[r].size(); ++t) flat[t * b + r] = targets[r][t];
  return softmax_cross_entropy(logits, flat);
}

// ---------------------------------------------------------------------------
// Sequence log-probabilities (eval mode)

/// log P(ids | SOS) = sum_i log P(ids[i] | SOS, ids[0..i)) for each sequence,
/// in natural log. Empty sequences score 0. Sequences are evaluated in
/// length-sorted groups; each row's arithmetic is independent of its batch
/// mates, so results do not depend on grouping.
inline std::vector<double> sequence_logprobs(const LmParameters& params,
                                             const std::vector<std::vector<TokenId>>& seqs,
                                             TokenId sos, std::size_t group = 64) {
  NoGradGuard no_grad;
  std::vector<double> out(seqs.size(), 0.0);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    if (!seqs[i].empty()) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return seqs[a].size() > seqs[b].size(); });
  const std::size_t v = params.w_out.dim(0);
  for (std::size_t start = 0; start < order.size(); start += group) {
    const std::size_t end = std::min(order.size(), start + group);
    IdBatch inputs;
    for (std::size_t k = start; k < end; ++k) {
      const auto& s = seqs[order[k]];
      std::vector<TokenId> in{sos};
      in.insert(in.end(), s.begin(), s.end() - 1);
      inputs.push_back(std::move(in));
    }
    Tensor logits = forward_time_major(params, inputs, Mode::eval, 0.0, nullptr);
    const std::vector<double> logp = log_softmax_rows(logits);
    const std::size_t b = inputs.size();
    for (std::size_t r = 0; r < b; ++r) {
      const auto& s = seqs[order[start + r]];
      double total = 0.0;
      for (std::size_t t = 0; t < s.size(); ++t)
        total += logp[(t * b + r) * v + static_cast<std::size_t>(s[t])];
      out[order[start + r]] = total;
    }
  }
  return out;
}

/// exp(-total log-prob / total characters) over encoded lines.
inline double perplexity_of(const LmParameters& params, const std::vector<std::vector<TokenId>>& seqs,
                            TokenId sos) {
  std::size_t n = 0;
  for (const auto& s : seqs) n += s.size();
  if (n == 0) throw DataError("perplexity: no characters to score");
  double total = 0.0;
  for (double lp : sequence_logprobs(params, seqs, sos)) total += lp;
  return std::exp(-total / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Optimization

/// Global L2 norm over every parameter gradient.
inline double gradient_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.node()->grad) sq += g * g;
  return std::sqrt(sq);
}

/// Rescales all gradients by clip/norm when the global norm exceeds clip, or
/// clamps each element to [-clip, clip] in value mode. Returns the pre-clip
/// global norm.
inline double clip_gradients(std::vector<Tensor>& params, double clip,
                             ClipMode mode = ClipMode::norm) {
  const double norm = gradient_norm(params);
  if (mode == ClipMode::value) {
    for (auto& p : params)
      if (p.has_grad())
        for (double& g : p.grad_storage()) g = std::clamp(g, -clip, clip);
    return norm;
  }
  if (norm > clip) {
    const double s = clip / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (double& g : p.grad_storage()) g *= s;
  }
  return norm;
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update. Tensors without a gradient are treated as
/// having a zero gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state/parameter mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& theta = params[k].storage();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != theta.size()) throw ShapeError("adam_step: state/parameter mismatch");
    const std::vector<double>* g = params[k].has_grad() ? &params[k].node()->grad : nullptr;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training

struct LmCheckpoint {
  LmConfig config;
  LmParameters params;
  Vocabulary vocab;
  double best_val_perplexity = std::numeric_limits<double>::quiet_NaN();
  std::int64_t epoch_of_best = -1;
};

struct CurvePoint {
  std::size_t epoch;
  double train_loss;
  double val_ppl;
};

/// Index of the first minimum of a validation trace.
inline std::size_t argmin_trace(const std::vector<double>& trace) {
  if (trace.empty()) throw UsageError("argmin of an empty trace");
  return static_cast<std::size_t>(std::min_element(trace.begin(), trace.end()) - trace.begin());
}

struct TrainResult {
  LmCheckpoint checkpoint;
  std::vector<CurvePoint> curve;
};

/// Thrown when the loss turns non-finite; carries the best checkpoint seen so
/// far, if any validation had completed.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, std::optional<LmCheckpoint> last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const std::optional<LmCheckpoint>& last_good() const { return last_good_; }

 private:
  std::optional<LmCheckpoint> last_good_;
};

inline void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
  out << "epoch,train_loss,val_ppl\n";
  char buf[128];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", p.epoch, p.train_loss, p.val_ppl);
    out << buf;
  }
}

/// Trains on normalized lines. The vocabulary comes from train_lines; any
/// validation character outside it is an error. Validation perplexity is
/// measured every pass (passes mode) or every eval_every steps and after the
/// final step (steps mode); the returned parameters are those of the
/// evaluation with the lowest perplexity. `on_eval` sees each curve point as
/// it is produced.
inline TrainResult train(const std::vector<std::string>& train_lines,
                         const std::vector<std::string>& valid_lines, LmConfig cfg,
                         const std::function<void(const CurvePoint&)>& on_eval = {}) {
  const Vocabulary vocab = build_vocab(train_lines);
  cfg.vocab_size = vocab.size();
  cfg.validate();

  std::vector<std::vector<TokenId>> train_ids;
  for (const auto& l : train_lines) train_ids.push_back(encode(l, vocab));
  std::vector<std::vector<TokenId>> valid_ids;
  for (std::size_t i = 0; i < valid_lines.size(); ++i) {
    try {
      valid_ids.push_back(encode(valid_lines[i], vocab));
    } catch (const OovError& e) {
      throw DataError("validation line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  const std::vector<Chunk> chunks = chunk_corpus(train_ids, cfg.max_seq_len);
  if (chunks.empty()) throw DataError("empty corpus");
  std::size_t valid_chars = 0;
  for (const auto& s : valid_ids) valid_chars += s.size();
  if (valid_chars == 0) throw DataError("empty validation set");

  LmParameters params = init_params(cfg);
  std::vector<Tensor> flat = params.tensors();
  AdamState adam;
  Rng order_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  DropoutSource dropout(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  const TokenId sos = vocab.sos_id();

  TrainResult result;
  std::optional<LmCheckpoint> best;
  std::vector<double> trace;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  std::vector<std::size_t> order(chunks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  auto next_batch = [&]() {
    std::vector<Chunk> batch;
    while (batch.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        shuffle(order, order_rng);
        cursor = 0;
      }
      batch.push_back(chunks[order[cursor++]]);
      if (cfg.epoch_mode == EpochMode::passes && cursor == order.size()) break;
    }
    return batch;
  };

  auto step = [&](const std::vector<Chunk>& batch) {
    try {
      params.zero_grad();
      Tensor loss = batch_loss(params, batch, sos, Mode::train, cfg.dropout, &dropout);
      if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
      backward(loss);
      clip_gradients(flat, cfg.clip, cfg.clip_mode);
      adam_step(flat, adam, cfg.learning_rate);
      loss_sum += loss.item();
      ++loss_count;
    } catch (const NumericError& e) {
      throw TrainingDiverged(std::string("training diverged: ") + e.what(), best);
    }
  };

  auto evaluate = [&](std::size_t epoch) {
    double ppl;
    try {
      ppl = perplexity_of(params, valid_ids, sos);
      if (!std::isfinite(ppl)) throw NumericError("non-finite validation perplexity");
    } catch (const NumericError& e) {
      throw TrainingDiverged(std::string("validation diverged: ") + e.what(), best);
    }
    CurvePoint pt{epoch, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0, ppl};
    loss_sum = 0.0;
    loss_count = 0;
    trace.push_back(ppl);
    result.curve.push_back(pt);
    if (on_eval) on_eval(pt);
    if (!best || ppl < best->best_val_perplexity) {
      best = LmCheckpoint{cfg, params.clone(), vocab, ppl, static_cast<std::int64_t>(epoch)};
    }
  };

  if (cfg.epoch_mode == EpochMode::passes) {
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
      shuffle(order, order_rng);
      cursor = 0;
      while (cursor < order.size()) step(next_batch());
      evaluate(epoch);
    }
  } else {
    for (std::size_t s = 1; s <= cfg.max_epochs; ++s) {
      step(next_batch());
      if (s % cfg.eval_every == 0 || s == cfg.max_epochs) evaluate(s);
    }
  }

  // best tracks the first strict minimum, i.e. argmin_trace(trace)
  result.checkpoint = std::move(*best);
  return result;
}

}  // namespace clmr
