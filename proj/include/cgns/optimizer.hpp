#pragma once

#include <map>
#include <string>
#include <vector>

#include "cgns/config.hpp"
#include "cgns/layers.hpp"

namespace cgns {

/// Adam over a subset of a parameter registry. Moment estimates are keyed by
/// parameter name, so each update path (generator/encoder side vs
/// discriminator side) owns its own instance and step count.
class Adam {
 public:
  explicit Adam(const OptimizerConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

  /// Applies one update to every parameter whose name starts with any of the
  /// given prefixes, consuming the currently accumulated gradients.
  void step(ParamRegistry& reg, const std::vector<std::string>& prefixes) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (auto& [name, tensor] : reg.items()) {
      bool matches = false;
      for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) {
          matches = true;
          break;
        }
      if (!matches) continue;
      Tensor param = tensor;
      auto& slot = state_[name];
      if (slot.m.empty()) {
        slot.m.assign(param.numel(), 0.0);
        slot.v.assign(param.numel(), 0.0);
      }
      const auto& g = param.grad();
      for (std::size_t i = 0; i < param.numel(); ++i) {
        slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
        slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double m_hat = slot.m[i] / bc1;
        const double v_hat = slot.v[i] / bc2;
        param[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

  long steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  std::map<std::string, Moments> state_;
  long t_ = 0;
};

}  // namespace cgns
