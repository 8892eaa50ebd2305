#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cgns/rng.hpp"
#include "cgns/tensor.hpp"

namespace cgns {

/// Ordered registry of named trainable tensors. Every layer parameter in a
/// model appears here exactly once; the ordering is the checkpoint ordering.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, Tensor t) {
    for (const auto& [n, _] : params_)
      if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_requires_grad();
    params_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return params_; }

  Tensor* find(const std::string& name) {
    for (auto& [n, t] : params_)
      if (n == name) return &t;
    return nullptr;
  }

  void zero_grad() {
    for (auto& [n, t] : params_) t.zero_grad();
  }

  /// Toggle gradient accumulation for all parameters whose name starts with
  /// prefix. Frozen parameters still pass gradients through.
  void set_trainable(const std::string& prefix, bool on) {
    for (auto& [n, t] : params_)
      if (n.rfind(prefix, 0) == 0) t.set_requires_grad(on);
  }

  std::vector<std::pair<std::string, Tensor>> with_prefix(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [n, t] : params_)
      if (n.rfind(prefix, 0) == 0) out.emplace_back(n, t);
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
};

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline Tensor init_uniform(Shape shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

enum class Activation { None, Relu, Sigmoid, Tanh };

inline Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::None: return x;
    case Activation::Relu: return relu(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Tanh: return tanh_t(x);
  }
  throw std::logic_error("bad activation");
}

/// Affine layer y = xW + b.
struct Dense {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)
  Activation act = Activation::None;

  Dense() = default;
  Dense(ParamRegistry& reg, const std::string& name, int in, int out, Activation a, Rng& rng)
      : act(a) {
    weight = reg.add(name + ".weight", init_uniform({in, out}, in, rng));
    bias = reg.add(name + ".bias", init_uniform({out}, in, rng));
  }

  Tensor forward(const Tensor& x) const { return activate(add_bias(matmul(x, weight), bias), act); }
};

/// Stack of affine layers, relu between hidden layers, linear output unless
/// overridden.
struct DenseStack {
  std::vector<Dense> layers;

  DenseStack() = default;
  DenseStack(ParamRegistry& reg, const std::string& name, int in, const std::vector<int>& widths,
             Rng& rng, Activation hidden = Activation::Relu, Activation out = Activation::None) {
    int prev = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const Activation a = (i + 1 == widths.size()) ? out : hidden;
      layers.emplace_back(reg, name + ".fc" + std::to_string(i), prev, widths[i], a, rng);
      prev = widths[i];
    }
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (const auto& l : layers) h = l.forward(h);
    return h;
  }

  int output_width() const { return layers.back().weight.shape()[1]; }
};

/// Gated recurrent unit cell. With all parameters zero, h_t = 0.5 * h_{t-1}.
struct GruCell {
  int input_size = 0;
  int hidden_size = 0;
  Tensor wz, uz, bz;  // update gate
  Tensor wr, ur, br;  // reset gate
  Tensor wh, uh, bh;  // candidate

  GruCell() = default;
  GruCell(ParamRegistry& reg, const std::string& name, int in, int hidden, Rng& rng)
      : input_size(in), hidden_size(hidden) {
    auto mk = [&](const char* part, int rows) {
      return reg.add(name + "." + part, init_uniform({rows, hidden}, in + hidden, rng));
    };
    wz = mk("wz", in);
    uz = mk("uz", hidden);
    bz = reg.add(name + ".bz", Tensor::zeros({hidden}));
    wr = mk("wr", in);
    ur = mk("ur", hidden);
    br = reg.add(name + ".br", Tensor::zeros({hidden}));
    wh = mk("wh", in);
    uh = mk("uh", hidden);
    bh = reg.add(name + ".bh", Tensor::zeros({hidden}));
  }

  /// x: (batch, input_size), h_prev: (batch, hidden_size).
  Tensor step(const Tensor& x, const Tensor& h_prev) const {
    if (x.shape().size() != 2 || x.shape()[1] != input_size)
      throw std::invalid_argument("gru_step: input shape " + shape_str(x.shape()) + " expected (*, " +
                                  std::to_string(input_size) + ")");
    if (h_prev.shape().size() != 2 || h_prev.shape()[1] != hidden_size || h_prev.shape()[0] != x.shape()[0])
      throw std::invalid_argument("gru_step: hidden shape " + shape_str(h_prev.shape()) + " expected (" +
                                  std::to_string(x.shape()[0]) + ", " + std::to_string(hidden_size) + ")");
    Tensor z = sigmoid(add_bias(add(matmul(x, wz), matmul(h_prev, uz)), bz));
    Tensor r = sigmoid(add_bias(add(matmul(x, wr), matmul(h_prev, ur)), br));
    Tensor cand = tanh_t(add_bias(add(matmul(x, wh), matmul(mul(r, h_prev), uh)), bh));
    // h = (1 - z) .* h_prev + z .* cand
    Tensor one_minus_z = add_scalar(neg(z), 1.0);
    return add(mul(one_minus_z, h_prev), mul(z, cand));
  }

  /// Runs the cell over a sequence; returns all hidden states.
  std::vector<Tensor> sequence(const std::vector<Tensor>& xs, const Tensor& h0) const {
    if (xs.empty()) throw std::invalid_argument("gru_sequence: empty input sequence");
    std::vector<Tensor> hs;
    hs.reserve(xs.size());
    Tensor h = h0;
    for (const auto& x : xs) {
      h = step(x, h);
      hs.push_back(h);
    }
    return hs;
  }
};

/// One convolution layer over (C,H,W) tensors.
struct Conv2dLayer {
  Tensor weight;  // (F,C,kh,kw)
  Tensor bias;    // (F)
  int pad = 0;
  int stride = 1;
  Activation act = Activation::None;

  Conv2dLayer() = default;
  Conv2dLayer(ParamRegistry& reg, const std::string& name, int in_ch, int out_ch, int kernel, int pad_,
              int stride_, Activation a, Rng& rng)
      : pad(pad_), stride(stride_), act(a) {
    weight = reg.add(name + ".weight", init_uniform({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng));
    bias = reg.add(name + ".bias", init_uniform({out_ch}, in_ch * kernel * kernel, rng));
  }

  Tensor forward(const Tensor& x) const { return activate(conv2d(x, weight, bias, pad, stride), act); }
};

/// Convolution stack with optional pooling after each layer.
struct ConvStack {
  std::vector<Conv2dLayer> layers;
  int pool = 1;  // pooling window applied after each layer (1 = none)

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (const auto& l : layers) {
      h = l.forward(h);
      if (pool > 1 && h.shape()[1] >= pool && h.shape()[2] >= pool) h = avg_pool2d(h, pool, pool);
    }
    return h;
  }
};

}  // namespace cgns
