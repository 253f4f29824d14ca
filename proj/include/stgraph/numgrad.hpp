#pragma once

// Tape-based reverse-mode differentiation over dense matrices. Every forward
// op computes its value eagerly and, when an input requires a gradient, pushes
// a backward closure onto the tape. backward() replays the closures in exact
// reverse order of recording.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stgraph/error.hpp"
#include "stgraph/tensor.hpp"

namespace stgraph::ng {

template <std::floating_point T>
using BasicParameterSet = std::map<std::string, BasicTensor<T>>;

using ParameterSet = BasicParameterSet<double>;

template <std::floating_point T>
class BasicTape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
template <std::floating_point T>
class BasicVar {
 public:
  BasicVar() = default;
  BasicVar(BasicTape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const BasicTensor<T>& value() const { return tape_->value(id_); }
  std::size_t id() const noexcept { return id_; }
  BasicTape<T>* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  BasicTape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <std::floating_point T>
class BasicTape {
 public:
  using Tensor = BasicTensor<T>;
  using Var = BasicVar<T>;
  using Backward = std::function<void(BasicTape&, std::size_t out)>;

  /// With `record_backward == false` the tape only evaluates (no closures kept).
  explicit BasicTape(bool record_backward = true) : record_backward_(record_backward) {}

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(Tensor value) {
    value.require_finite("constant");
    nodes_.push_back(Node{std::move(value), std::nullopt, {}, false, {}});
    return Var(this, nodes_.size() - 1);
  }

  /// Registers a named parameter leaf. Registering the same name twice returns
  /// the first handle, so gradients from every use accumulate in one place.
  Var parameter(const std::string& name, const Tensor& value) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) {
      return Var(this, it->second);
    }
    value.require_finite(name.c_str());
    nodes_.push_back(Node{value, std::nullopt, {}, record_backward_, name});
    param_ids_.emplace(name, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
  }

  /// Records an op output. The closure is kept only if some input needs a gradient.
  Var record(Tensor value, std::initializer_list<std::size_t> inputs, Backward backward,
             const char* op_name = "op") {
    return record_impl(std::move(value), std::span<const std::size_t>(inputs.begin(), inputs.size()),
                       std::move(backward), op_name);
  }

  Var record(Tensor value, const std::vector<std::size_t>& inputs, Backward backward,
             const char* op_name = "op") {
    return record_impl(std::move(value), std::span<const std::size_t>(inputs), std::move(backward),
                       op_name);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Upstream gradient of a node during/after backward (zeros if unreached).
  const Tensor& grad(std::size_t id) {
    return grad_accumulator(id);
  }

  Tensor& grad_accumulator(std::size_t id) {
    auto& node = nodes_.at(id);
    if (!node.grad) node.grad.emplace(node.value.shape(), T{0});
    return *node.grad;
  }

  void backward(const Var& loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
    const auto& v = value(loss.id());
    if (v.size() != 1) {
      throw ContractError("backward: loss must be scalar, got " + v.shape_string());
    }
    if (!record_backward_) throw ContractError("backward: tape was created without recording");
    for (auto& node : nodes_) node.grad.reset();
    grad_accumulator(loss.id())[0] = T{1};
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& node = nodes_[i];
      if (node.backward && node.grad) node.backward(*this, i);
    }
    backward_done_ = true;
  }

  /// Gradient of a registered parameter; zero-shaped lookup fails for unknown names.
  Tensor gradient(const std::string& name) const {
    auto it = param_ids_.find(name);
    if (it == param_ids_.end()) throw LookupError("gradient: unknown parameter '" + name + "'");
    const auto& node = nodes_[it->second];
    return node.grad ? *node.grad : Tensor(node.value.shape(), T{0});
  }

  /// Gradients for every entry of `params`; untouched parameters get exact zeros.
  BasicParameterSet<T> gradients(const BasicParameterSet<T>& params) const {
    BasicParameterSet<T> out;
    for (const auto& [name, tensor] : params) {
      auto it = param_ids_.find(name);
      if (it != param_ids_.end() && nodes_[it->second].grad) {
        out.emplace(name, *nodes_[it->second].grad);
      } else {
        out.emplace(name, Tensor(tensor.shape(), T{0}));
      }
    }
    return out;
  }

  bool recording() const noexcept { return record_backward_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    Backward backward;
    bool requires_grad = false;
    std::optional<std::string> param;
  };

  Var record_impl(Tensor value, std::span<const std::size_t> inputs, Backward backward,
                  const char* op_name) {
    value.require_finite(op_name);
    bool needs = false;
    if (record_backward_) {
      for (auto id : inputs) needs = needs || nodes_.at(id).requires_grad;
    }
    nodes_.push_back(Node{std::move(value), std::nullopt, needs ? std::move(backward) : Backward{},
                          needs, std::nullopt});
    return Var(this, nodes_.size() - 1);
  }

  bool record_backward_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
};

using Tape = BasicTape<double>;
using Var = BasicVar<double>;

// ---------------------------------------------------------------------------
// Forward kernels on plain tensors.

namespace kernels {

template <std::floating_point T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

template <std::floating_point T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_string() + " x " +
                     b.shape_string());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  BasicTensor<T> out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a(i, p);
      if (aip == T{0}) continue;
      for (std::size_t j = 0; j < m; ++j) out(i, j) += aip * b(p, j);
    }
  }
  return out;
}

/// a * b^T
template <std::floating_point T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  BasicTensor<T> out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(j, p);
      out(i, j) = acc;
    }
  }
  return out;
}

/// a^T * b
template <std::floating_point T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  BasicTensor<T> out({n, m});
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      const T api = a(p, i);
      if (api == T{0}) continue;
      for (std::size_t j = 0; j < m; ++j) out(i, j) += api * b(p, j);
    }
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  BasicTensor<T> out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <std::floating_point T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  require_same_shape(dst, src, "accumulate");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <std::floating_point T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& m) {
  m.require_finite("softmax_rows");
  if (m.rows() == 0 || m.cols() == 0) throw ShapeError("softmax_rows: empty matrix");
  BasicTensor<T> out(m.shape());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row_span(i);
    const T peak = *std::max_element(row.begin(), row.end());
    T total{0};
    for (std::size_t j = 0; j < m.cols(); ++j) {
      out(i, j) = std::exp(row[j] - peak);
      total += out(i, j);
    }
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= total;
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

/// Mask used by the relu backward rule; the subgradient at exactly zero is 0.
template <std::floating_point T>
BasicTensor<T> relu_mask(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? T{1} : T{0};
  return out;
}

template <std::floating_point T>
struct LayerNormResult {
  BasicTensor<T> out;
  BasicTensor<T> normalized;  // (x - mean) / sqrt(var + eps)
  std::vector<T> inv_std;
};

/// Row-wise layer normalisation with population variance.
template <std::floating_point T>
LayerNormResult<T> layer_norm_rows(const BasicTensor<T>& x, const BasicTensor<T>& scale,
                                   const BasicTensor<T>& shift, T eps) {
  const std::size_t n = x.rows(), d = x.cols();
  if (d == 0) throw ShapeError("layer_norm: zero-width input");
  if (scale.size() != d || shift.size() != d) {
    throw ShapeError("layer_norm: scale/shift " + scale.shape_string() + "/" +
                     shift.shape_string() + " do not match width " + std::to_string(d));
  }
  LayerNormResult<T> r{BasicTensor<T>(x.shape()), BasicTensor<T>(x.shape()), std::vector<T>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = x.row_span(i);
    T mean{0};
    for (T v : row) mean += v;
    mean /= static_cast<T>(d);
    T var{0};
    for (T v : row) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + eps);
    r.inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T xhat = (row[j] - mean) * inv;
      r.normalized(i, j) = xhat;
      r.out(i, j) = scale[j] * xhat + shift[j];
    }
  }
  r.out.require_finite("layer_norm");
  return r;
}

/// Numerically stable log(1 + e^-|x|) + max(x, 0) - x*z.
template <std::floating_point T>
T sigmoid_cross_entropy(T x, T z) {
  return std::max(x, T{0}) - x * z + std::log1p(std::exp(-std::abs(x)));
}

template <std::floating_point T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Taped ops.

namespace detail {

template <std::floating_point T>
BasicTape<T>& tape_of(const BasicVar<T>& a) {
  if (!a.valid()) throw ContractError("operation on an empty variable");
  return *a.tape();
}

template <std::floating_point T>
BasicTape<T>& tape_of(const BasicVar<T>& a, const BasicVar<T>& b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
  return tape_of(a);
}

}  // namespace detail

template <std::floating_point T>
BasicVar<T> matmul(const BasicVar<T>& a, const BasicVar<T>& b) {
  auto& tape = detail::tape_of(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(kernels::matmul(a.value(), b.value()), {ia, ib},
                     [ia, ib](BasicTape<T>& t, std::size_t o) {
                       const auto& g = t.grad(o);
                       if (t.requires_grad(ia))
                         kernels::add_into(t.grad_accumulator(ia), kernels::matmul_nt(g, t.value(ib)));
                       if (t.requires_grad(ib))
                         kernels::add_into(t.grad_accumulator(ib), kernels::matmul_tn(t.value(ia), g));
                     },
                     "matmul");
}

template <std::floating_point T>
BasicVar<T> add(const BasicVar<T>& a, const BasicVar<T>& b) {
  auto& tape = detail::tape_of(a, b);
  kernels::require_same_shape(a.value(), b.value(), "add");
  BasicTensor<T> out = a.value();
  kernels::add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib},
                     [ia, ib](BasicTape<T>& t, std::size_t o) {
                       const auto g = t.grad(o);
                       if (t.requires_grad(ia)) kernels::add_into(t.grad_accumulator(ia), g);
                       if (t.requires_grad(ib)) kernels::add_into(t.grad_accumulator(ib), g);
                     },
                     "add");
}

template <std::floating_point T>
BasicVar<T> scale(const BasicVar<T>& a, T factor) {
  auto& tape = detail::tape_of(a);
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia},
                     [ia, factor](BasicTape<T>& t, std::size_t o) {
                       const auto& g = t.grad(o);
                       auto& acc = t.grad_accumulator(ia);
                       for (std::size_t i = 0; i < g.size(); ++i) acc[i] += factor * g[i];
                     },
                     "scale");
}

/// Adds a 1 x m row to every row of an n x m matrix.
template <std::floating_point T>
BasicVar<T> add_row(const BasicVar<T>& a, const BasicVar<T>& row) {
  auto& tape = detail::tape_of(a, row);
  const auto& av = a.value();
  const auto& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row: " + av.shape_string() + " + " + rv.shape_string());
  }
  BasicTensor<T> out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
  const std::size_t ia = a.id(), ir = row.id();
  return tape.record(std::move(out), {ia, ir},
                     [ia, ir](BasicTape<T>& t, std::size_t o) {
                       const auto g = t.grad(o);
                       if (t.requires_grad(ia)) kernels::add_into(t.grad_accumulator(ia), g);
                       if (t.requires_grad(ir)) {
                         auto& acc = t.grad_accumulator(ir);
                         for (std::size_t i = 0; i < g.rows(); ++i)
                           for (std::size_t j = 0; j < g.cols(); ++j) acc(0, j) += g(i, j);
                       }
                     },
                     "add_row");
}

/// s(i, j) = a(i) + b(j) for an n x 1 column `a` and an m x 1 column `b`.
template <std::floating_point T>
BasicVar<T> outer_sum(const BasicVar<T>& a, const BasicVar<T>& b) {
  auto& tape = detail::tape_of(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != 1 || bv.cols() != 1) {
    throw ShapeError("outer_sum: expects columns, got " + av.shape_string() + " and " +
                     bv.shape_string());
  }
  BasicTensor<T> out({av.rows(), bv.rows()});
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < bv.rows(); ++j) out(i, j) = av(i, 0) + bv(j, 0);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib},
                     [ia, ib](BasicTape<T>& t, std::size_t o) {
                       const auto g = t.grad(o);
                       if (t.requires_grad(ia)) {
                         auto& acc = t.grad_accumulator(ia);
                         for (std::size_t i = 0; i < g.rows(); ++i)
                           for (std::size_t j = 0; j < g.cols(); ++j) acc(i, 0) += g(i, j);
                       }
                       if (t.requires_grad(ib)) {
                         auto& acc = t.grad_accumulator(ib);
                         for (std::size_t i = 0; i < g.rows(); ++i)
                           for (std::size_t j = 0; j < g.cols(); ++j) acc(j, 0) += g(i, j);
                       }
                     },
                     "outer_sum");
}

/// Multiplies row i of `a` by c(i, 0).
template <std::floating_point T>
BasicVar<T> mul_col(const BasicVar<T>& a, const BasicVar<T>& c) {
  auto& tape = detail::tape_of(a, c);
  const auto& av = a.value();
  const auto& cv = c.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) {
    throw ShapeError("mul_col: " + av.shape_string() + " * " + cv.shape_string());
  }
  BasicTensor<T> out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= cv(i, 0);
  const std::size_t ia = a.id(), ic = c.id();
  return tape.record(std::move(out), {ia, ic},
                     [ia, ic](BasicTape<T>& t, std::size_t o) {
                       const auto g = t.grad(o);
                       const auto& av = t.value(ia);
                       const auto& cv = t.value(ic);
                       if (t.requires_grad(ia)) {
                         auto& acc = t.grad_accumulator(ia);
                         for (std::size_t i = 0; i < g.rows(); ++i)
                           for (std::size_t j = 0; j < g.cols(); ++j) acc(i, j) += g(i, j) * cv(i, 0);
                       }
                       if (t.requires_grad(ic)) {
                         auto& acc = t.grad_accumulator(ic);
                         for (std::size_t i = 0; i < g.rows(); ++i)
                           for (std::size_t j = 0; j < g.cols(); ++j) acc(i, 0) += g(i, j) * av(i, j);
                       }
                     },
                     "mul_col");
}

template <std::floating_point T>
BasicVar<T> transpose(const BasicVar<T>& a) {
  auto& tape = detail::tape_of(a);
  const std::size_t ia = a.id();
  return tape.record(kernels::transpose(a.value()), {ia},
                     [ia](BasicTape<T>& t, std::size_t o) {
                       kernels::add_into(t.grad_accumulator(ia), kernels::transpose(t.grad(o)));
                     },
                     "transpose");
}

template <std::floating_point T>
BasicVar<T> relu(const BasicVar<T>& a) {
  auto& tape = detail::tape_of(a);
  const std::size_t ia = a.id();
  return tape.record(kernels::relu(a.value()), {ia},
                     [ia](BasicTape<T>& t, std::size_t o) {
                       const auto& g = t.grad(o);
                       const auto& x = t.value(ia);
                       auto& acc = t.grad_accumulator(ia);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (x[i] > T{0}) acc[i] += g[i];
                     },
                     "relu");
}

template <std::floating_point T>
BasicVar<T> softmax_rows(const BasicVar<T>& a) {
  auto& tape = detail::tape_of(a);
  const std::size_t ia = a.id();
  return tape.record(kernels::softmax_rows(a.value()), {ia},
                     [ia](BasicTape<T>& t, std::size_t o) {
                       const auto g = t.grad(o);
                       const auto& y = t.value(o);
                       auto& acc = t.grad_accumulator(ia);
                       for (std::size_t i = 0; i < y.rows(); ++i) {
                         T dot{0};
                         for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                         for (std::size_t j = 0; j < y.cols(); ++j)
                           acc(i, j) += y(i, j) * (g(i, j) - dot);
                       }
                     },
                     "softmax_rows");
}

/// Row-wise layer norm; `scale` and `shift` are 1 x d rows.
template <std::floating_point T>
BasicVar<T> layer_norm(const BasicVar<T>& x, const BasicVar<T>& scale, const BasicVar<T>& shift,
                       T eps) {
  auto& tape = detail::tape_of(x, scale);
  detail::tape_of(x, shift);
  auto r = kernels::layer_norm_rows(x.value(), scale.value(), shift.value(), eps);
  const std::size_t ix = x.id(), is = scale.id(), ib = shift.id();
  return tape.record(
      std::move(r.out), {ix, is, ib},
      [ix, is, ib, xhat = std::move(r.normalized), inv = std::move(r.inv_std)](BasicTape<T>& t,
                                                                              std::size_t o) {
        const auto g = t.grad(o);
        const auto& gamma = t.value(is);
        const std::size_t n = g.rows(), d = g.cols();
        if (t.requires_grad(ix)) {
          auto& acc = t.grad_accumulator(ix);
          for (std::size_t i = 0; i < n; ++i) {
            T mean_dx{0}, mean_dx_xhat{0};
            for (std::size_t j = 0; j < d; ++j) {
              const T dxhat = g(i, j) * gamma[j];
              mean_dx += dxhat;
              mean_dx_xhat += dxhat * xhat(i, j);
            }
            mean_dx /= static_cast<T>(d);
            mean_dx_xhat /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dxhat = g(i, j) * gamma[j];
              acc(i, j) += inv[i] * (dxhat - mean_dx - xhat(i, j) * mean_dx_xhat);
            }
          }
        }
        if (t.requires_grad(is)) {
          auto& acc = t.grad_accumulator(is);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) acc[j] += g(i, j) * xhat(i, j);
        }
        if (t.requires_grad(ib)) {
          auto& acc = t.grad_accumulator(ib);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) acc[j] += g(i, j);
        }
      },
      "layer_norm");
}

/// [a | b] for matrices with equal row counts.
template <std::floating_point T>
BasicVar<T> concat_cols(const BasicVar<T>& a, const BasicVar<T>& b) {
  auto& tape = detail::tape_of(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat_cols: " + av.shape_string() + " | " + bv.shape_string());
  }
  const std::size_t n = av.rows(), ca = av.cols(), cb = bv.cols();
  BasicTensor<T> out({n, ca + cb});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = av(i, j);
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = bv(i, j);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib},
                     [ia, ib, ca, cb](BasicTape<T>& t, std::size_t o) {
                       const auto g = t.grad(o);
                       if (t.requires_grad(ia)) {
                         auto& acc = t.grad_accumulator(ia);
                         for (std::size_t i = 0; i < g.rows(); ++i)
                           for (std::size_t j = 0; j < ca; ++j) acc(i, j) += g(i, j);
                       }
                       if (t.requires_grad(ib)) {
                         auto& acc = t.grad_accumulator(ib);
                         for (std::size_t i = 0; i < g.rows(); ++i)
                           for (std::size_t j = 0; j < cb; ++j) acc(i, j) += g(i, ca + j);
                       }
                     },
                     "concat_cols");
}

/// Vertical stack of matrices with equal column counts.
template <std::floating_point T>
BasicVar<T> concat_rows(const std::vector<BasicVar<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
  auto& tape = detail::tape_of(parts.front());
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    detail::tape_of(parts.front(), p);
    if (p.value().cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + parts.front().value().shape_string() +
                       " vs " + p.value().shape_string());
    }
    ids.push_back(p.id());
    offsets.push_back(rows);
    rows += p.value().rows();
  }
  if (parts.size() == 1) return parts.front();
  BasicTensor<T> out({rows, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + offsets[k] * cols);
  }
  return tape.record(std::move(out), ids,
                     [ids, offsets](BasicTape<T>& t, std::size_t o) {
                       const auto g = t.grad(o);
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.requires_grad(ids[k])) continue;
                         auto& acc = t.grad_accumulator(ids[k]);
                         const std::size_t base = offsets[k] * g.cols();
                         for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[base + i];
                       }
                     },
                     "concat_rows");
}

/// Rows [begin, end).
template <std::floating_point T>
BasicVar<T> slice_rows(const BasicVar<T>& a, std::size_t begin, std::size_t end) {
  auto& tape = detail::tape_of(a);
  const auto& av = a.value();
  if (begin > end || end > av.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of " + av.shape_string());
  }
  const std::size_t cols = av.cols();
  std::vector<T> vals(av.values().begin() + begin * cols, av.values().begin() + end * cols);
  const std::size_t ia = a.id();
  return tape.record(BasicTensor<T>({end - begin, cols}, std::move(vals)), {ia},
                     [ia, begin](BasicTape<T>& t, std::size_t o) {
                       const auto& g = t.grad(o);
                       auto& acc = t.grad_accumulator(ia);
                       const std::size_t base = begin * g.cols();
                       for (std::size_t i = 0; i < g.size(); ++i) acc[base + i] += g[i];
                     },
                     "slice_rows");
}

/// Columns [begin, end).
template <std::floating_point T>
BasicVar<T> slice_cols(const BasicVar<T>& a, std::size_t begin, std::size_t end) {
  auto& tape = detail::tape_of(a);
  const auto& av = a.value();
  if (begin > end || end > av.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of " + av.shape_string());
  }
  BasicTensor<T> out({av.rows(), end - begin});
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = av(i, j);
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia},
                     [ia, begin](BasicTape<T>& t, std::size_t o) {
                       const auto& g = t.grad(o);
                       auto& acc = t.grad_accumulator(ia);
                       for (std::size_t i = 0; i < g.rows(); ++i)
                         for (std::size_t j = 0; j < g.cols(); ++j) acc(i, begin + j) += g(i, j);
                     },
                     "slice_cols");
}

/// out.row(k) = a.row(index[k]); repeated indices accumulate in backward.
template <std::floating_point T>
BasicVar<T> gather_rows(const BasicVar<T>& a, std::vector<std::size_t> index) {
  auto& tape = detail::tape_of(a);
  const auto& av = a.value();
  const std::size_t cols = av.cols();
  BasicTensor<T> out({index.size(), cols});
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= av.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(index[k]) + " out of " +
                       av.shape_string());
    }
    for (std::size_t j = 0; j < cols; ++j) out(k, j) = av(index[k], j);
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia},
                     [ia, index = std::move(index)](BasicTape<T>& t, std::size_t o) {
                       const auto& g = t.grad(o);
                       auto& acc = t.grad_accumulator(ia);
                       for (std::size_t k = 0; k < index.size(); ++k)
                         for (std::size_t j = 0; j < g.cols(); ++j) acc(index[k], j) += g(k, j);
                     },
                     "gather_rows");
}

template <std::floating_point T>
BasicVar<T> sum(const BasicVar<T>& a) {
  auto& tape = detail::tape_of(a);
  T total{0};
  for (T v : a.value().values()) total += v;
  const std::size_t ia = a.id();
  return tape.record(BasicTensor<T>::scalar(total), {ia},
                     [ia](BasicTape<T>& t, std::size_t o) {
                       const T g = t.grad(o)[0];
                       for (auto& v : t.grad_accumulator(ia).values()) v += g;
                     },
                     "sum");
}

/// Sum over all entries of the stable sigmoid cross-entropy against binary targets.
template <std::floating_point T>
BasicVar<T> sigmoid_cross_entropy_sum(const BasicVar<T>& logits, const BasicTensor<T>& targets) {
  auto& tape = detail::tape_of(logits);
  kernels::require_same_shape(logits.value(), targets, "sigmoid_cross_entropy");
  const auto& x = logits.value();
  T total{0};
  for (std::size_t i = 0; i < x.size(); ++i) total += kernels::sigmoid_cross_entropy(x[i], targets[i]);
  const std::size_t ix = logits.id();
  return tape.record(BasicTensor<T>::scalar(total), {ix},
                     [ix, targets](BasicTape<T>& t, std::size_t o) {
                       const T g = t.grad(o)[0];
                       const auto& x = t.value(ix);
                       auto& acc = t.grad_accumulator(ix);
                       for (std::size_t i = 0; i < x.size(); ++i)
                         acc[i] += g * (kernels::sigmoid(x[i]) - targets[i]);
                     },
                     "sigmoid_cross_entropy");
}

/// Sum over rows of -sum_j y_ij log softmax(x)_ij, computed through log-sum-exp.
template <std::floating_point T>
BasicVar<T> softmax_cross_entropy_sum(const BasicVar<T>& logits, const BasicTensor<T>& targets) {
  auto& tape = detail::tape_of(logits);
  kernels::require_same_shape(logits.value(), targets, "softmax_cross_entropy");
  const auto& x = logits.value();
  const auto probs = kernels::softmax_rows(x);
  T total{0};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row_span(i);
    const T peak = *std::max_element(row.begin(), row.end());
    T acc{0};
    for (T v : row) acc += std::exp(v - peak);
    const T lse = peak + std::log(acc);
    for (std::size_t j = 0; j < x.cols(); ++j) total += targets(i, j) * (lse - row[j]);
  }
  const std::size_t ix = logits.id();
  return tape.record(BasicTensor<T>::scalar(total), {ix},
                     [ix, targets, probs](BasicTape<T>& t, std::size_t o) {
                       const T g = t.grad(o)[0];
                       auto& acc = t.grad_accumulator(ix);
                       for (std::size_t i = 0; i < probs.rows(); ++i) {
                         T mass{0};
                         for (std::size_t j = 0; j < probs.cols(); ++j) mass += targets(i, j);
                         for (std::size_t j = 0; j < probs.cols(); ++j)
                           acc(i, j) += g * (probs(i, j) * mass - targets(i, j));
                       }
                     },
                     "softmax_cross_entropy");
}

}  // namespace stgraph::ng
