#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivmc/nn/layers.hpp"

namespace ivmc::nn {

// Adaptive-moment optimizer over a fixed parameter registry. Moment buffers
// are allocated on first step and stay aligned with the registry order.
struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  std::vector<std::vector<double>> m, v;

  void step(std::vector<ParamView>& params) {
    if (m.empty()) {
      m.resize(params.size());
      v.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i].value->size(), 0.0);
        v[i].assign(params[i].value->size(), 0.0);
      }
    }
    if (m.size() != params.size())
      throw std::invalid_argument("optimizer_step: registry size changed");
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& val = *params[i].value;
      auto& grad = *params[i].grad;
      if (val.size() != grad.size() || val.size() != m[i].size())
        throw std::invalid_argument("optimizer_step: shape mismatch at " + params[i].name);
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double g = grad[j];
        if (!std::isfinite(g))
          throw std::runtime_error("optimizer_step: non-finite gradient at " + params[i].name);
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
        const double mh = m[i][j] / bc1;
        const double vh = v[i][j] / bc2;
        val[j] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }
};

inline void optimizer_step(OptimizerState& state, std::vector<ParamView>& params) {
  state.step(params);
}

}  // namespace ivmc::nn
