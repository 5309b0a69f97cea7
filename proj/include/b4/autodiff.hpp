#pragma once

// Tape-based reverse-mode automatic differentiation over dense Tensors.
//
// A Tape records every operation in creation order, which is a valid
// topological order. backward() walks the tape once in reverse, so each node
// is visited exactly once. Trainable Parameters are registered as leaves; their
// gradients accumulate into Parameter::grad when backward() finishes.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "b4/tensor.hpp"

namespace b4 {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the upstream gradient of the node being back-propagated.
  using BackwardFn = std::function<void(Tape&, const Tensor& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var constant(Tensor value) { return push(Node{std::move(value), nullptr, nullptr, false, {}}); }

  /// Non-differentiable view of a tensor owned elsewhere; it must outlive the tape.
  Var view(const Tensor& value) { return push(Node{Tensor{}, &value, nullptr, false, {}}); }

  /// Differentiable input whose gradient is readable through grad() after backward().
  Var input(Tensor value) { return push(Node{std::move(value), nullptr, nullptr, true, {}}); }

  /// Registers a trainable parameter as a leaf. Repeated calls return the same node.
  Var param(Parameter& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
    Var v = push(Node{Tensor{}, &p.value, &p, true, {}});
    param_ids_.emplace(&p, v.id_);
    return v;
  }

  /// Records an operation result. The node requires grad iff any parent does.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn, const char* op) {
    require_finite(value, op);
    bool needs = false;
    for (const Var& p : parents) {
      check_owned(p, op);
      needs = needs || nodes_[p.id_].requires_grad;
    }
    return push(Node{std::move(value), nullptr, nullptr, needs, needs ? std::move(fn) : BackwardFn{}});
  }

  /// Same as record() for a variable number of parents.
  Var record_n(Tensor value, const std::vector<Var>& parents, BackwardFn fn, const char* op) {
    require_finite(value, op);
    bool needs = false;
    for (const Var& p : parents) {
      check_owned(p, op);
      needs = needs || nodes_[p.id_].requires_grad;
    }
    return push(Node{std::move(value), nullptr, nullptr, needs, needs ? std::move(fn) : BackwardFn{}});
  }

  const Tensor& value(const Var& v) const {
    const Node& n = nodes_[v.id_];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }

  /// Gradient buffer of a parent during backward, or nullptr when the parent
  /// does not require grad (callers skip the corresponding computation).
  Tensor* grad_buffer(const Var& v) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(value(v).shape());
    return &n.grad;
  }

  /// Gradient of a differentiable input or parameter leaf after backward().
  const Tensor& grad(const Var& v) const {
    check_owned(v, "grad");
    const Node& n = nodes_[v.id_];
    if (n.grad.empty()) throw GraphError("node received no gradient");
    return n.grad;
  }

  /// Runs the reverse sweep from a scalar loss and accumulates into Parameter::grad.
  void backward(const Var& loss) {
    check_owned(loss, "backward");
    if (consumed_) throw GraphError("backward already ran on this tape");
    if (value(loss).size() != 1) {
      throw GraphError("backward requires a scalar loss, got shape " + shape_string(value(loss).shape()));
    }
    if (!nodes_[loss.id_].requires_grad) throw GraphError("loss is detached from every differentiable leaf");
    consumed_ = true;
    Tensor* seed = grad_buffer(loss);
    (*seed)[0] = 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
    for (Node& n : nodes_) {
      if (!n.param || n.grad.empty()) continue;
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external;
    Parameter* param;
    bool requires_grad;
    BackwardFn backward;
    Tensor grad{};
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  void check_owned(const Var& v, const char* op) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) {
      throw GraphError(std::string(op) + ": variable does not belong to this tape");
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

namespace ad {

namespace detail {
inline void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}
inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.value().size() != b.value().size() || a.rows() != b.rows()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}
inline Tape& tape_of(const Var& a) {
  if (!a.valid()) throw GraphError("operation on an unbound variable");
  return *a.tape();
}
}  // namespace detail

/// a[m,k] · b[k,n].
inline Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  Tensor out({A.rows(), B.cols()});
  kernels::gemm(A, false, B, false, out, false);
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) kernels::gemm(g, false, b.value(), true, *ga, true);
    if (Tensor* gb = t.grad_buffer(b)) kernels::gemm(a.value(), true, g, false, *gb, true);
  }, "matmul");
}

/// a[m,k] · b[n,k]ᵀ.
inline Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols()) {
    throw DimensionError("matmul_nt: " + shape_string(A.shape()) + " x " + shape_string(B.shape()) + "^T");
  }
  Tensor out({A.rows(), B.rows()});
  kernels::gemm(A, false, B, true, out, false);
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) kernels::gemm(g, false, b.value(), false, *ga, true);
    if (Tensor* gb = t.grad_buffer(b)) kernels::gemm(g, true, a.value(), false, *gb, true);
  }, "matmul_nt");
}

inline Var transpose(const Var& a) {
  return detail::tape_of(a).record(kernels::transpose(a.value()), {a}, [a](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) detail::add_into(*ga, kernels::transpose(g));
  }, "transpose");
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  detail::add_into(out, b.value());
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) detail::add_into(*ga, g);
    if (Tensor* gb = t.grad_buffer(b)) detail::add_into(*gb, g);
  }, "add");
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) detail::add_into(*ga, g);
    if (Tensor* gb = t.grad_buffer(b)) {
      auto d = gb->data();
      auto s = g.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
    }
  }, "sub");
}

/// Element-wise product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    auto s = g.data();
    if (Tensor* ga = t.grad_buffer(a)) {
      auto d = ga->data();
      auto bv2 = b.value().data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i] * bv2[i];
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      auto d = gb->data();
      auto av = a.value().data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i] * av[i];
    }
  }, "mul");
}

inline Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return detail::tape_of(a).record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      auto d = ga->data();
      auto s = g.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
    }
  }, "scale");
}

/// x[n,d] + bias[d] broadcast over rows. The only broadcast the tape supports.
inline Var add_row_bias(const Var& x, const Var& bias) {
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  if (B.size() != X.cols()) {
    throw DimensionError("add_row_bias: bias " + shape_string(B.shape()) + " vs rows of width " +
                         std::to_string(X.cols()));
  }
  Tensor out = X;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += B[c];
  }
  return detail::tape_of(x).record(std::move(out), {x, bias}, [x, bias](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) detail::add_into(*gx, g);
    if (Tensor* gb = t.grad_buffer(bias)) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) (*gb)[c] += row[c];
      }
    }
  }, "add_row_bias");
}

/// Row-wise softmax. When key_mask is given, columns with mask=false receive
/// zero weight and no gradient.
inline Var softmax_rows(const Var& x, std::vector<bool> key_mask = {}) {
  const Tensor& X = x.value();
  if (X.rank() != 2 && X.rank() != 1) throw DimensionError("softmax_rows expects a 2-D tensor");
  if (!key_mask.empty() && key_mask.size() != X.cols()) throw DimensionError("softmax_rows: mask width");
  Tensor y = kernels::softmax_rows(X, key_mask.empty() ? nullptr : &key_mask);
  Tensor saved = y;
  return detail::tape_of(x).record(std::move(y), {x}, [x, saved = std::move(saved)](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    for (std::size_t r = 0; r < saved.rows(); ++r) {
      auto yr = saved.row(r);
      auto gr = g.row(r);
      auto out = gx->row(r);
      const double inner = dot(yr, gr);
      for (std::size_t c = 0; c < yr.size(); ++c) out[c] += yr[c] * (gr[c] - inner);
    }
  }, "softmax_rows");
}

/// softmax_rows(q·kᵀ / scale) · v.
inline Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, double scale_by,
                                std::vector<bool> key_mask = {}) {
  if (q.cols() != k.cols()) {
    throw DimensionError("scaled_dot_attention: query width " + std::to_string(q.cols()) + " vs key width " +
                         std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) throw DimensionError("scaled_dot_attention: key/value row counts differ");
  if (!(scale_by > 0.0)) throw ConfigError("scaled_dot_attention: scale must be positive");
  Var weights = softmax_rows(scale(matmul_nt(q, k), 1.0 / scale_by), std::move(key_mask));
  return matmul(weights, v);
}

/// GELU, tanh approximation.
inline Var gelu(const Var& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor out = x.value();
  for (double& v : out.data()) {
    const double u = kC * (v + kA * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  return detail::tape_of(x).record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    auto xv = x.value().data();
    auto gs = g.data();
    auto d = gx->data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double v = xv[i];
      const double u = kC * (v + kA * v * v * v);
      const double th = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * kA * v * v);
      d[i] += gs[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  }, "gelu");
}

/// Per-row normalization to zero mean / unit variance, then gain and bias.
inline Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Tensor& X = x.value();
  const std::size_t n = X.rows();
  const std::size_t d = X.cols();
  if (gain.value().size() != d || bias.value().size() != d) throw DimensionError("layer_norm_rows: gain/bias width");
  Tensor xhat({n, d});
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = X.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto h = xhat.row(r);
    for (std::size_t c = 0; c < d; ++c) h[c] = (row[c] - mean) * inv_std[r];
  }
  Tensor out({n, d});
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  for (std::size_t r = 0; r < n; ++r) {
    auto h = xhat.row(r);
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) o[c] = h[c] * G[c] + B[c];
  }
  return detail::tape_of(x).record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
        const std::size_t rows = xhat.rows();
        const std::size_t width = xhat.cols();
        if (Tensor* gg = t.grad_buffer(gain)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < width; ++c) (*gg)[c] += g.at(r, c) * xhat.at(r, c);
        }
        if (Tensor* gb = t.grad_buffer(bias)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < width; ++c) (*gb)[c] += g.at(r, c);
        }
        if (Tensor* gx = t.grad_buffer(x)) {
          const Tensor& G2 = gain.value();
          std::vector<double> gh(width);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_gh = 0.0;
            double mean_gh_xhat = 0.0;
            for (std::size_t c = 0; c < width; ++c) {
              gh[c] = g.at(r, c) * G2[c];
              mean_gh += gh[c];
              mean_gh_xhat += gh[c] * xhat.at(r, c);
            }
            mean_gh /= static_cast<double>(width);
            mean_gh_xhat /= static_cast<double>(width);
            for (std::size_t c = 0; c < width; ++c) {
              gx->at(r, c) += inv_std[r] * (gh[c] - mean_gh - xhat.at(r, c) * mean_gh_xhat);
            }
          }
        }
      },
      "layer_norm_rows");
}

/// Rows of `table` selected by `ids` (embedding lookup).
inline Var gather_rows(const Var& table, std::vector<std::size_t> ids) {
  const Tensor& T = table.value();
  Tensor out({ids.size(), T.cols()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= T.rows()) {
      throw InternalError("gather_rows: id " + std::to_string(ids[i]) + " out of range for table with " +
                          std::to_string(T.rows()) + " rows");
    }
    auto src = T.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return detail::tape_of(table).record(std::move(out), {table}, [table, ids = std::move(ids)](Tape& t, const Tensor& g) {
    Tensor* gt = t.grad_buffer(table);
    if (!gt) return;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto dst = gt->row(ids[i]);
      auto src = g.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  }, "gather_rows");
}

/// Rows [begin, begin+count) of x.
inline Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  const Tensor& X = x.value();
  if (begin + count > X.rows() || count == 0) throw DimensionError("slice_rows: range out of bounds");
  Tensor out({count, X.cols()});
  std::copy_n(X.data().begin() + static_cast<std::ptrdiff_t>(begin * X.cols()), count * X.cols(),
              out.data().begin());
  return detail::tape_of(x).record(std::move(out), {x}, [x, begin](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    auto d = gx->data().subspan(begin * g.cols(), g.size());
    auto s = g.data();
    for (std::size_t i = 0; i < s.size(); ++i) d[i] += s[i];
  }, "slice_rows");
}

/// Vertical concatenation of blocks with equal width.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t width = parts.front().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.cols() != width) throw DimensionError("concat_rows: width mismatch");
    total += p.rows();
  }
  Tensor out({total, width});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += src.size();
  }
  return detail::tape_of(parts.front()).record_n(std::move(out), parts, [parts](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t n = p.value().size();
      if (Tensor* gp = t.grad_buffer(p)) {
        auto d = gp->data();
        for (std::size_t i = 0; i < n; ++i) d[i] += g[off + i];
      }
      off += n;
    }
  }, "concat_rows");
}

/// out[i] = a.row(i) · b.row(i); result shape [n,1].
inline Var row_dot(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "row_dot");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out({A.rows(), 1});
  for (std::size_t r = 0; r < A.rows(); ++r) out[r] = dot(A.row(r), B.row(r));
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& A2 = a.value();
    const Tensor& B2 = b.value();
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t r = 0; r < A2.rows(); ++r)
        for (std::size_t c = 0; c < A2.cols(); ++c) ga->at(r, c) += g[r] * B2.at(r, c);
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      for (std::size_t r = 0; r < A2.rows(); ++r)
        for (std::size_t c = 0; c < A2.cols(); ++c) gb->at(r, c) += g[r] * A2.at(r, c);
    }
  }, "row_dot");
}

/// Sum of all entries; scalar [1,1].
inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return detail::tape_of(x).record(Tensor({1, 1}, std::vector<double>{s}), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    for (double& v : gx->data()) v += g[0];
  }, "sum");
}

/// Σ_k weights[k]·scalars[k] for scalar nodes.
inline Var weighted_sum(const std::vector<Var>& scalars, std::vector<double> weights) {
  if (scalars.empty() || scalars.size() != weights.size()) throw DimensionError("weighted_sum: arity");
  double s = 0.0;
  for (std::size_t k = 0; k < scalars.size(); ++k) {
    if (scalars[k].value().size() != 1) throw DimensionError("weighted_sum: inputs must be scalars");
    s += weights[k] * scalars[k].value()[0];
  }
  return detail::tape_of(scalars.front())
      .record_n(Tensor({1, 1}, std::vector<double>{s}), scalars,
                [scalars, weights = std::move(weights)](Tape& t, const Tensor& g) {
                  for (std::size_t k = 0; k < scalars.size(); ++k)
                    if (Tensor* gk = t.grad_buffer(scalars[k])) (*gk)[0] += weights[k] * g[0];
                },
                "weighted_sum");
}

}  // namespace ad

}  // namespace b4
