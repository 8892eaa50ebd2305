#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace cgns {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;     // accumulated across backward calls
  std::vector<double> adjoint;  // scratch for one backward sweep
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;  // reads this->adjoint, adds into parents'
};

/// Handle to a dense double-precision tensor participating in define-by-run
/// reverse-mode differentiation. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return from(std::move(shape), {});
  }

  static Tensor constant(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.node_->values) x = v;
    return t;
  }

  static Tensor scalar(double v) { return constant({1}, v); }

  static Tensor from(Shape shape, std::vector<double> vals) {
    auto n = std::make_shared<TensorNode>();
    const std::size_t count = shape_numel(shape);
    n->shape = std::move(shape);
    if (vals.empty()) vals.assign(count, 0.0);
    if (vals.size() != count)
      throw std::invalid_argument("Tensor::from: " + std::to_string(vals.size()) +
                                  " values for shape " + shape_str(n->shape));
    n->values = std::move(vals);
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->values.size(); }
  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }

  double operator[](std::size_t i) const { return node_->values[i]; }
  double& operator[](std::size_t i) { return node_->values[i]; }

  /// 2-D element access.
  double at(int r, int c) const { return node_->values[static_cast<std::size_t>(r) * node_->shape[1] + c]; }
  double& at(int r, int c) { return node_->values[static_cast<std::size_t>(r) * node_->shape[1] + c]; }

  double scalar_value() const {
    if (numel() != 1) throw std::invalid_argument("scalar_value on shape " + shape_str(shape()));
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    if (on && node_->grad.size() != node_->values.size()) node_->grad.assign(node_->values.size(), 0.0);
    return *this;
  }

  std::vector<double>& grad() {
    if (node_->grad.size() != node_->values.size()) node_->grad.assign(node_->values.size(), 0.0);
    return node_->grad;
  }

  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

  /// Value copy severed from the recorded graph.
  Tensor detach() const { return from(node_->shape, node_->values); }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Scope enabling operation recording. Ops executed with no active Tape run
/// forward-only. Confined to one logical thread.
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static bool recording() { return active_ != nullptr; }

 private:
  inline static thread_local Tape* active_ = nullptr;
  Tape* prev_;
};

namespace detail {

inline bool track(std::initializer_list<Tensor> inputs) {
  if (!Tape::recording()) return false;
  for (const auto& t : inputs)
    if (t.node()->requires_grad) return true;
  return false;
}

inline void record(Tensor& out, std::initializer_list<Tensor> inputs, std::function<void()> backprop) {
  auto n = out.node();
  n->requires_grad = true;
  for (const auto& t : inputs) n->parents.push_back(t.node());
  n->backprop = std::move(backprop);
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape).
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a, b})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::record(r, {a, b}, [rn, an, bn] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i) {
        an->adjoint[i] += rn->adjoint[i];
        bn->adjoint[i] += rn->adjoint[i];
      }
    });
  }
  return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a, b})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::record(r, {a, b}, [rn, an, bn] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i) {
        an->adjoint[i] += rn->adjoint[i];
        bn->adjoint[i] -= rn->adjoint[i];
      }
    });
  }
  return r;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a, b})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::record(r, {a, b}, [rn, an, bn] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i) {
        an->adjoint[i] += rn->adjoint[i] * bn->values[i];
        bn->adjoint[i] += rn->adjoint[i] * an->values[i];
      }
    });
  }
  return r;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("div", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a, b})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::record(r, {a, b}, [rn, an, bn] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i) {
        const double inv = 1.0 / bn->values[i];
        an->adjoint[i] += rn->adjoint[i] * inv;
        bn->adjoint[i] -= rn->adjoint[i] * an->values[i] * inv * inv;
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Scalar-broadcast ops. The scalar side may itself be a 1-element Tensor so
// gradients can flow into it.
// ---------------------------------------------------------------------------

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + c;
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    detail::record(r, {a}, [rn, an] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i) an->adjoint[i] += rn->adjoint[i];
    });
  }
  return r;
}

inline Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    detail::record(r, {a}, [rn, an, c] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i) an->adjoint[i] += rn->adjoint[i] * c;
    });
  }
  return r;
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

/// a + s where s has one element, broadcast over a.
inline Tensor badd(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw std::invalid_argument("badd: broadcast side must be scalar");
  std::vector<double> out(a.numel());
  const double c = s[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + c;
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a, s})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    auto sn = s.node().get();
    detail::record(r, {a, s}, [rn, an, sn] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i) {
        an->adjoint[i] += rn->adjoint[i];
        sn->adjoint[0] += rn->adjoint[i];
      }
    });
  }
  return r;
}

inline Tensor bsub(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw std::invalid_argument("bsub: broadcast side must be scalar");
  std::vector<double> out(a.numel());
  const double c = s[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - c;
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a, s})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    auto sn = s.node().get();
    detail::record(r, {a, s}, [rn, an, sn] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i) {
        an->adjoint[i] += rn->adjoint[i];
        sn->adjoint[0] -= rn->adjoint[i];
      }
    });
  }
  return r;
}

inline Tensor bmul(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw std::invalid_argument("bmul: broadcast side must be scalar");
  std::vector<double> out(a.numel());
  const double c = s[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a, s})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    auto sn = s.node().get();
    detail::record(r, {a, s}, [rn, an, sn] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i) {
        an->adjoint[i] += rn->adjoint[i] * sn->values[0];
        sn->adjoint[0] += rn->adjoint[i] * an->values[i];
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class Bwd>
Tensor unary_op(const char*, const Tensor& a, Fwd fwd, Bwd dfn) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a[i]);
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    record(r, {a}, [rn, an, dfn] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i)
        an->adjoint[i] += rn->adjoint[i] * dfn(an->values[i], rn->values[i]);
    });
  }
  return r;
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh_t(const Tensor& a) {
  return detail::unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& a) {
  // subgradient 0 at exactly 0
  return detail::unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp_t(const Tensor& a) {
  return detail::unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Tensor log_t(const Tensor& a) {
  return detail::unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt_t(const Tensor& a) {
  return detail::unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary_op(
      "square", a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

inline Tensor abs_t(const Tensor& a) {
  return detail::unary_op(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i];
  Tensor r = Tensor::from({1}, {acc});
  if (detail::track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    detail::record(r, {a}, [rn, an] {
      for (std::size_t i = 0; i < an->adjoint.size(); ++i) an->adjoint[i] += rn->adjoint[0];
    });
  }
  return r;
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i];
  Tensor r = Tensor::from({1}, {acc * inv});
  if (detail::track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    detail::record(r, {a}, [rn, an, inv] {
      for (std::size_t i = 0; i < an->adjoint.size(); ++i) an->adjoint[i] += rn->adjoint[0] * inv;
    });
  }
  return r;
}

/// Row sums of a 2-D tensor: (m,n) -> (m).
inline Tensor sum_rows(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("sum_rows: need 2-D, got " + shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m, 0.0);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out[r] += a.at(r, c);
  Tensor r = Tensor::from({m}, std::move(out));
  if (detail::track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    detail::record(r, {a}, [rn, an, m, n] {
      for (int i = 0; i < m; ++i)
        for (int c = 0; c < n; ++c) an->adjoint[static_cast<std::size_t>(i) * n + c] += rn->adjoint[i];
    });
  }
  return r;
}

/// Maximum element (subgradient routed to the first argmax).
inline Tensor reduce_max(const Tensor& a) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < a.numel(); ++i)
    if (a[i] > a[arg]) arg = i;
  Tensor r = Tensor::from({1}, {a[arg]});
  if (detail::track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    detail::record(r, {a}, [rn, an, arg] { an->adjoint[arg] += rn->adjoint[0]; });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Linear algebra and shape ops.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += av * b.at(p, j);
    }
  Tensor r = Tensor::from({m, n}, std::move(out));
  if (detail::track({a, b})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::record(r, {a, b}, [rn, an, bn, m, k, n] {
      // dA += dC B^T ; dB += A^T dC
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double g = rn->adjoint[static_cast<std::size_t>(i) * n + j];
          if (g == 0.0) continue;
          for (int p = 0; p < k; ++p) {
            an->adjoint[static_cast<std::size_t>(i) * k + p] += g * bn->values[static_cast<std::size_t>(p) * n + j];
            bn->adjoint[static_cast<std::size_t>(p) * n + j] += g * an->values[static_cast<std::size_t>(i) * k + p];
          }
        }
    });
  }
  return r;
}

/// (m,n) matrix plus length-n bias row, broadcast over rows.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.shape().size() != 2 || bias.shape().size() != 1 || bias.shape()[0] != a.shape()[1])
    throw std::invalid_argument("add_bias: " + shape_str(a.shape()) + " with bias " + shape_str(bias.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.numel());
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out[static_cast<std::size_t>(r) * n + c] = a.at(r, c) + bias[c];
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a, bias})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    auto bn = bias.node().get();
    detail::record(r, {a, bias}, [rn, an, bn, m, n] {
      for (int i = 0; i < m; ++i)
        for (int c = 0; c < n; ++c) {
          const double g = rn->adjoint[static_cast<std::size_t>(i) * n + c];
          an->adjoint[static_cast<std::size_t>(i) * n + c] += g;
          bn->adjoint[c] += g;
        }
    });
  }
  return r;
}

inline Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("transpose: need 2-D, got " + shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.numel());
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out[static_cast<std::size_t>(c) * m + r] = a.at(r, c);
  Tensor r = Tensor::from({n, m}, std::move(out));
  if (detail::track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    detail::record(r, {a}, [rn, an, m, n] {
      for (int i = 0; i < m; ++i)
        for (int c = 0; c < n; ++c)
          an->adjoint[static_cast<std::size_t>(i) * n + c] += rn->adjoint[static_cast<std::size_t>(c) * m + i];
    });
  }
  return r;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  Tensor r = Tensor::from(std::move(shape), a.values());
  if (detail::track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    detail::record(r, {a}, [rn, an] {
      for (std::size_t i = 0; i < rn->adjoint.size(); ++i) an->adjoint[i] += rn->adjoint[i];
    });
  }
  return r;
}

namespace detail {

inline void concat_strides(const Shape& s, int axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
}

}  // namespace detail

inline Tensor concat(const std::vector<Tensor>& parts, int axis = 0) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size())) throw std::invalid_argument("concat: bad axis");
  int total_axis = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != s0.size()) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t d = 0; d < s0.size(); ++d)
      if (static_cast<int>(d) != axis && p.shape()[d] != s0[d])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
    total_axis += p.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total_axis;
  std::size_t outer, inner;
  detail::concat_strides(out_shape, axis, outer, inner);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t axis_off = 0;
  for (const auto& p : parts) {
    const std::size_t pa = static_cast<std::size_t>(p.shape()[axis]);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a = 0; a < pa; ++a)
        for (std::size_t in = 0; in < inner; ++in)
          out[(o * total_axis + axis_off + a) * inner + in] = p[(o * pa + a) * inner + in];
    axis_off += pa;
  }
  Tensor r = Tensor::from(std::move(out_shape), std::move(out));
  bool any = false;
  if (Tape::recording())
    for (const auto& p : parts)
      if (p.node()->requires_grad) any = true;
  if (any) {
    auto rn = r.node();
    rn->requires_grad = true;
    std::vector<TensorNode*> raw;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
      rn->parents.push_back(p.node());
      raw.push_back(p.node().get());
      sizes.push_back(static_cast<std::size_t>(p.shape()[axis]));
    }
    auto* rp = rn.get();
    const std::size_t ta = static_cast<std::size_t>(total_axis);
    rn->backprop = [rp, raw, sizes, outer, inner, ta] {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < raw.size(); ++pi) {
        const std::size_t pa = sizes[pi];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t a = 0; a < pa; ++a)
            for (std::size_t in = 0; in < inner; ++in)
              raw[pi]->adjoint[(o * pa + a) * inner + in] += rp->adjoint[(o * ta + off + a) * inner + in];
        off += pa;
      }
    };
  }
  return r;
}

inline Tensor slice(const Tensor& a, int axis, int start, int len) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || len <= 0 || start + len > s[axis])
    throw std::invalid_argument("slice: bad range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") on axis " + std::to_string(axis) +
                                " of " + shape_str(s));
  Shape out_shape = s;
  out_shape[axis] = len;
  std::size_t outer, inner;
  detail::concat_strides(s, axis, outer, inner);
  const std::size_t sa = static_cast<std::size_t>(s[axis]);
  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    for (int k = 0; k < len; ++k)
      for (std::size_t in = 0; in < inner; ++in)
        out[(o * len + k) * inner + in] = a[(o * sa + start + k) * inner + in];
  Tensor r = Tensor::from(std::move(out_shape), std::move(out));
  if (detail::track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    detail::record(r, {a}, [rn, an, outer, inner, sa, start, len] {
      for (std::size_t o = 0; o < outer; ++o)
        for (int k = 0; k < len; ++k)
          for (std::size_t in = 0; in < inner; ++in)
            an->adjoint[(o * sa + start + k) * inner + in] += rn->adjoint[(o * static_cast<std::size_t>(len) + k) * inner + in];
    });
  }
  return r;
}

/// Row-wise softmax over the last axis of a 1-D or 2-D tensor.
inline Tensor softmax(const Tensor& a) {
  const bool vec = a.shape().size() == 1;
  if (!vec && a.shape().size() != 2) throw std::invalid_argument("softmax: need 1-D or 2-D");
  const int m = vec ? 1 : a.shape()[0];
  const int n = vec ? a.shape()[0] : a.shape()[1];
  std::vector<double> out(a.numel());
  for (int r = 0; r < m; ++r) {
    double mx = a[static_cast<std::size_t>(r) * n];
    for (int c = 1; c < n; ++c) mx = std::max(mx, a[static_cast<std::size_t>(r) * n + c]);
    double z = 0.0;
    for (int c = 0; c < n; ++c) {
      const double e = std::exp(a[static_cast<std::size_t>(r) * n + c] - mx);
      out[static_cast<std::size_t>(r) * n + c] = e;
      z += e;
    }
    for (int c = 0; c < n; ++c) out[static_cast<std::size_t>(r) * n + c] /= z;
  }
  Tensor r = Tensor::from(a.shape(), std::move(out));
  if (detail::track({a})) {
    auto rn = r.node().get();
    auto an = a.node().get();
    detail::record(r, {a}, [rn, an, m, n] {
      for (int i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int c = 0; c < n; ++c)
          dot += rn->adjoint[static_cast<std::size_t>(i) * n + c] * rn->values[static_cast<std::size_t>(i) * n + c];
        for (int c = 0; c < n; ++c) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + c;
          an->adjoint[idx] += rn->values[idx] * (rn->adjoint[idx] - dot);
        }
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Convolution and pooling over (C,H,W) tensors.
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int pad = 0, int stride = 1) {
  if (input.shape().size() != 3 || weight.shape().size() != 4)
    throw std::invalid_argument("conv2d: need (C,H,W) input and (F,C,kh,kw) weight, got " +
                                shape_str(input.shape()) + " and " + shape_str(weight.shape()));
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int F = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
  if (weight.shape()[1] != C)
    throw std::invalid_argument("conv2d: channel mismatch, input C=" + std::to_string(C) +
                                " weight C=" + std::to_string(weight.shape()[1]));
  if (bias.shape().size() != 1 || bias.shape()[0] != F)
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) + " for F=" + std::to_string(F));
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  auto in_idx = [=](int c, int y, int x) { return (static_cast<std::size_t>(c) * H + y) * W + x; };
  auto w_idx = [=](int f, int c, int y, int x) { return ((static_cast<std::size_t>(f) * C + c) * kh + y) * kw + x; };
  auto out_idx = [=](int f, int y, int x) { return (static_cast<std::size_t>(f) * Ho + y) * Wo + x; };
  std::vector<double> out(static_cast<std::size_t>(F) * Ho * Wo);
  for (int f = 0; f < F; ++f)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = bias[f];
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= W) continue;
              acc += input[in_idx(c, iy, ix)] * weight[w_idx(f, c, ky, kx)];
            }
          }
        out[out_idx(f, oy, ox)] = acc;
      }
  Tensor r = Tensor::from({F, Ho, Wo}, std::move(out));
  if (detail::track({input, weight, bias})) {
    auto rn = r.node().get();
    auto in = input.node().get();
    auto wn = weight.node().get();
    auto bn = bias.node().get();
    detail::record(r, {input, weight, bias}, [=] {
      for (int f = 0; f < F; ++f)
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            const double g = rn->adjoint[out_idx(f, oy, ox)];
            if (g == 0.0) continue;
            bn->adjoint[f] += g;
            for (int c = 0; c < C; ++c)
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox * stride + kx - pad;
                  if (ix < 0 || ix >= W) continue;
                  in->adjoint[in_idx(c, iy, ix)] += g * wn->values[w_idx(f, c, ky, kx)];
                  wn->adjoint[w_idx(f, c, ky, kx)] += g * in->values[in_idx(c, iy, ix)];
                }
              }
          }
    });
  }
  return r;
}

inline Tensor avg_pool2d(const Tensor& input, int kh, int kw, int stride_h = 0, int stride_w = 0) {
  if (input.shape().size() != 3) throw std::invalid_argument("avg_pool2d: need (C,H,W), got " + shape_str(input.shape()));
  if (stride_h == 0) stride_h = kh;
  if (stride_w == 0) stride_w = kw;
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int Ho = (H - kh) / stride_h + 1;
  const int Wo = (W - kw) / stride_w + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("avg_pool2d: window larger than input");
  const double inv = 1.0 / (kh * kw);
  auto in_idx = [=](int c, int y, int x) { return (static_cast<std::size_t>(c) * H + y) * W + x; };
  auto out_idx = [=](int c, int y, int x) { return (static_cast<std::size_t>(c) * Ho + y) * Wo + x; };
  std::vector<double> out(static_cast<std::size_t>(C) * Ho * Wo);
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = 0.0;
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) acc += input[in_idx(c, oy * stride_h + ky, ox * stride_w + kx)];
        out[out_idx(c, oy, ox)] = acc * inv;
      }
  Tensor r = Tensor::from({C, Ho, Wo}, std::move(out));
  if (detail::track({input})) {
    auto rn = r.node().get();
    auto in = input.node().get();
    detail::record(r, {input}, [=] {
      for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            const double g = rn->adjoint[out_idx(c, oy, ox)] * inv;
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) in->adjoint[in_idx(c, oy * stride_h + ky, ox * stride_w + kx)] += g;
          }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Backward pass.
// ---------------------------------------------------------------------------

/// Reverse sweep from a scalar loss. Gradients of every reachable
/// requires_grad tensor are accumulated additively into .grad.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  // Iterative post-order DFS for a topological ordering.
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      TensorNode* p = node->parents[child++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  for (TensorNode* n : topo) n->adjoint.assign(n->values.size(), 0.0);
  loss.node()->adjoint[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
  for (TensorNode* n : topo) {
    if (n->requires_grad) {
      if (n->grad.size() != n->values.size()) n->grad.assign(n->values.size(), 0.0);
      for (std::size_t i = 0; i < n->adjoint.size(); ++i) n->grad[i] += n->adjoint[i];
    }
    n->adjoint.clear();
    n->adjoint.shrink_to_fit();
  }
}

}  // namespace cgns
