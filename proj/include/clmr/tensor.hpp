#pragma once

// Dense float64 tensors with reverse-mode differentiation.
//
// Every op returns a new Tensor whose node keeps its inputs alive and knows
// how to push its gradient back to them. backward() walks that recorded
// graph once in reverse topological order and then drops the links, so each
// forward pass owns a throwaway tape. Leaves created with requires_grad keep
// their accumulated gradients until zero_grad().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "clmr/error.hpp"

namespace clmr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Shared handle to a node. Copies alias the same storage; use clone() for a
/// deep copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor filled(Shape shape, double v) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({}, {v}, requires_grad);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> values() { return node_->value; }
  std::vector<double>& storage() { return node_->value; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  /// Accumulated gradient; zeros if nothing has flowed back yet.
  std::vector<double> grad() const {
    return node_->grad.empty() ? std::vector<double>(size(), 0.0) : node_->grad;
  }
  std::vector<double>& grad_storage() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const {
    return Tensor(node_->shape, node_->value, node_->requires_grad);
  }

  /// Same values, no graph history.
  Tensor detach() const { return Tensor(node_->shape, node_->value, false); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

/// Wraps an op result, wiring it into the graph when any input needs grad.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  check_finite(value, op);
  Tensor out(std::move(shape), std::move(value));
  if (!grad_mode()) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  Node* n = out.node();
  n->requires_grad = true;
  for (auto& t : inputs) n->parents.push_back(t.node_ptr());
  n->backward = std::move(backward);
  return out;
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(t.shape()));
  }
}

inline void accumulate(Node& parent, const std::vector<double>& g) {
  if (!parent.requires_grad) return;
  auto& dst = parent.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

/// a[m x k] * b[k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += x * brow[j];
    }
  }
  return detail::make_result(
      "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        detail::Node& A = *self.parents[0];
        detail::Node& B = *self.parents[1];
        const auto& g = self.grad;
        if (A.requires_grad) {
          auto& ga = A.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B.value[p * n + j];
              ga[i * k + p] += acc;
            }
        }
        if (B.requires_grad) {
          auto& gb = B.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double x = A.value[i * k + p];
              if (x == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * g[i * n + j];
            }
        }
      });
}

/// a[m x k] * b[n x k]^T, the layout used for weight matrices stored as
/// [out x in].
inline Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul_transposed");
  detail::require_rank(b, 2, "matmul_transposed");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_transposed: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = av.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = bv.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[i * n + j] = acc;
    }
  }
  return detail::make_result(
      "matmul_transposed", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        detail::Node& A = *self.parents[0];
        detail::Node& B = *self.parents[1];
        const auto& g = self.grad;
        if (A.requires_grad) {
          auto& ga = A.ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            double* garow = ga.data() + i * k;
            for (std::size_t j = 0; j < n; ++j) {
              const double gij = g[i * n + j];
              if (gij == 0.0) continue;
              const double* brow = B.value.data() + j * k;
              for (std::size_t p = 0; p < k; ++p) garow[p] += gij * brow[p];
            }
          }
        }
        if (B.requires_grad) {
          auto& gb = B.ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            const double* arow = A.value.data() + i * k;
            for (std::size_t j = 0; j < n; ++j) {
              const double gij = g[i * n + j];
              if (gij == 0.0) continue;
              double* gbrow = gb.data() + j * k;
              for (std::size_t p = 0; p < k; ++p) gbrow[p] += gij * arow[p];
            }
          }
        }
      });
}

/// Elementwise sum of equal shapes, or a[.. x n] + bias[n] broadcast over the
/// leading dimensions.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = !same && b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0);
  if (!same && !bias) {
    throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  const std::size_t n = b.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[same ? i : i % n];
  return detail::make_result("add", a.shape(), std::move(out), {a, b},
                             [same, n](detail::Node& self) {
                               detail::Node& A = *self.parents[0];
                               detail::Node& B = *self.parents[1];
                               detail::accumulate(A, self.grad);
                               if (B.requires_grad) {
                                 auto& gb = B.ensure_grad();
                                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   gb[same ? i : i % n] += self.grad[i];
                               }
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    detail::Node& A = *self.parents[0];
    detail::Node& B = *self.parents[1];
    const auto& g = self.grad;
    if (A.requires_grad) {
      auto& ga = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& gb = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x *= s;
  return detail::make_result("scale", a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    detail::Node& A = *self.parents[0];
    auto& ga = A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += s * self.grad[i];
  });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(xv[i]);
  return detail::make_result("sigmoid", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    detail::Node& X = *self.parents[0];
    auto& gx = X.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      gx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

inline Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  return detail::make_result("tanh", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    detail::Node& X = *self.parents[0];
    auto& gx = X.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      gx[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

/// Stacks rank-2 tensors with equal column counts vertically.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) {
      throw ShapeError("concat_rows: incompatible shapes " + shape_str(parts[0].shape()) +
                       " and " + shape_str(p.shape()));
    }
    offsets.push_back(rows * cols);
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return detail::make_result("concat_rows", {rows, cols}, std::move(out), parts,
                             [offsets](detail::Node& self) {
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 detail::Node& P = *self.parents[k];
                                 if (!P.requires_grad) continue;
                                 auto& gp = P.ensure_grad();
                                 for (std::size_t i = 0; i < gp.size(); ++i)
                                   gp[i] += self.grad[offsets[k] + i];
                               }
                             });
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) { return concat_rows({a, b}); }

/// Columns [begin, end) of a rank-2 tensor.
inline Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin > end || end > cols) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data() + r * cols + begin, w, out.data() + r * w);
  return detail::make_result("slice", {rows, w}, std::move(out), {x},
                             [rows, cols, begin, w](detail::Node& self) {
                               auto& gx = self.parents[0]->ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < w; ++c)
                                   gx[r * cols + begin + c] += self.grad[r * w + c];
                             });
}

/// out row i = x row perm[i].
inline Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  detail::require_rank(x, 2, "permute_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (perm.size() != rows) throw ShapeError("permute_rows: permutation size mismatch");
  std::vector<double> out(rows * cols);
  auto xv = x.values();
  for (std::size_t i = 0; i < rows; ++i) {
    if (perm[i] >= rows) throw ShapeError("permute_rows: index out of range");
    std::copy_n(xv.data() + perm[i] * cols, cols, out.data() + i * cols);
  }
  return detail::make_result("permute_rows", {rows, cols}, std::move(out), {x},
                             [perm, cols](detail::Node& self) {
                               auto& gx = self.parents[0]->ensure_grad();
                               for (std::size_t i = 0; i < perm.size(); ++i)
                                 for (std::size_t c = 0; c < cols; ++c)
                                   gx[perm[i] * cols + c] += self.grad[i * cols + c];
                             });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {x},
                             [](detail::Node& self) {
                               detail::accumulate(*self.parents[0], self.grad);
                             });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::make_result("sum", {}, {s}, {x}, [](detail::Node& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (double& g : gx) g += self.grad[0];
  });
}

/// Row-wise log-softmax of a rank-2 tensor, without graph recording.
inline std::vector<double> log_softmax_rows(const Tensor& logits) {
  detail::require_rank(logits, 2, "log_softmax_rows");
  const std::size_t rows = logits.dim(0), v = logits.dim(1);
  auto lv = logits.values();
  std::vector<double> out(rows * v);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = lv.data() + r * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) out[r * v + j] = row[j] - lse;
  }
  return out;
}

/// Marks a row of softmax_cross_entropy targets as padding.
inline constexpr std::int32_t kIgnoreTarget = -1;

/// Mean over non-ignored rows of -log softmax(logits[row])[target[row]].
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets) {
  detail::require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t rows = logits.dim(0), v = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(rows) + " rows");
  }
  std::size_t count = 0;
  for (auto t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw DataError("softmax_cross_entropy: target " + std::to_string(t) + " out of range for " +
                      std::to_string(v) + " classes");
    }
    ++count;
  }
  if (count == 0) throw DataError("softmax_cross_entropy: every target is ignored");
  std::vector<double> logp = log_softmax_rows(logits);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    if (targets[r] != kIgnoreTarget) loss -= logp[r * v + static_cast<std::size_t>(targets[r])];
  loss /= static_cast<double>(count);
  return detail::make_result(
      "softmax_cross_entropy", {}, {loss}, {logits},
      [targets, logp = std::move(logp), rows, v, count](detail::Node& self) {
        auto& gl = self.parents[0]->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(count);
        for (std::size_t r = 0; r < rows; ++r) {
          if (targets[r] == kIgnoreTarget) continue;
          for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += g * std::exp(logp[r * v + j]);
          gl[r * v + static_cast<std::size_t>(targets[r])] -= g;
        }
      });
}

// ---------------------------------------------------------------------------
// Differentiation

/// Populates grad on every reachable tensor that requires it, then releases
/// the recorded graph below the loss.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
    }
  }
}

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2eps for every
/// element of x. x is perturbed in place and restored.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor x,
                               double eps = 1e-5) {
  auto& xs = x.storage();
  std::vector<double> g(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double orig = xs[i];
    xs[i] = orig + eps;
    const double up = f(x);
    xs[i] = orig - eps;
    const double down = f(x);
    xs[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return Tensor(x.shape(), std::move(g));
}

}  // namespace clmr
