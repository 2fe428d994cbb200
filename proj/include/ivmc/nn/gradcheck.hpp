#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ivmc/common.hpp"
#include "ivmc/nn/layers.hpp"

namespace ivmc::nn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Central-difference verification of analytic gradients. loss_fn must zero
// and refill every gradient buffer in the registry, and must replay any
// stochastic noise identically on every call. components_per_block == 0
// checks every component.
inline GradCheckResult gradient_check(
    std::vector<ParamView> params, const std::function<double()>& loss_fn,
    double epsilon, std::size_t components_per_block = 0,
    std::uint64_t subsample_seed = 0) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("gradient_check: epsilon must be > 0");
  // analytic pass
  loss_fn();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(*p.grad);

  GradCheckResult res;
  Rng pick(derive_seed(subsample_seed, 0x67636b));
  for (std::size_t bi = 0; bi < params.size(); ++bi) {
    auto& val = *params[bi].value;
    std::vector<std::size_t> idx;
    if (components_per_block == 0 || val.size() <= components_per_block) {
      idx.resize(val.size());
      for (std::size_t j = 0; j < val.size(); ++j) idx[j] = j;
    } else {
      for (std::size_t k = 0; k < components_per_block; ++k)
        idx.push_back(pick.uniform_int(val.size()));
    }
    for (std::size_t j : idx) {
      const double saved = val[j];
      val[j] = saved + epsilon;
      const double lp = loss_fn();
      val[j] = saved - epsilon;
      const double lm = loss_fn();
      val[j] = saved;
      const double numeric = (lp - lm) / (2.0 * epsilon);
      const double a = analytic[bi][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = params[bi].name;
        res.worst_index = j;
      }
    }
  }
  // restore gradient buffers to the analytic state
  loss_fn();
  return res;
}

}  // namespace ivmc::nn
