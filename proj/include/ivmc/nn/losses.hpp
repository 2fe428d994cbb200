#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ivmc/common.hpp"

namespace ivmc::nn {

// Mean over components, not sum; keeps the four loss terms on one scale.
inline double mse(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size() || pred.empty())
    throw std::invalid_argument("mse: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - target[i];
    acc += r * r;
  }
  return acc / static_cast<double>(pred.size());
}

inline void mse_backward(const std::vector<double>& pred,
                         const std::vector<double>& target, double scale,
                         std::vector<double>& dpred) {
  dpred.resize(pred.size());
  const double k = 2.0 * scale / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    dpred[i] = k * (pred[i] - target[i]);
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

// Categorical cross-entropy with one-hot target, via stabilized log-softmax.
inline double cce(const std::vector<double>& logits, const std::vector<double>& onehot) {
  if (logits.size() != onehot.size())
    throw std::invalid_argument("cce: size mismatch");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  const double logz = std::log(z) + m;
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    acc -= onehot[i] * (logits[i] - logz);
  return acc;
}

inline void cce_backward(const std::vector<double>& logits,
                         const std::vector<double>& onehot, double scale,
                         std::vector<double>& dlogits) {
  const std::vector<double> p = softmax(logits);
  dlogits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    dlogits[i] = scale * (p[i] - onehot[i]);
}

struct HeadPrediction {
  std::vector<double> delta_ee;    // 3
  std::vector<double> grp_logits;  // 3
  std::vector<double> q_obj;       // 3
  std::vector<double> q_ee;        // 3
};

struct HeadTarget {
  std::vector<double> delta_ee;
  std::vector<double> grp_onehot;
  std::vector<double> q_obj;
  std::vector<double> q_ee;
};

// MSE(delta EE) + CCE(gripper) + MSE(q_obj) + MSE(q_ee), equally weighted.
inline double loss_eq1(const HeadPrediction& pred, const HeadTarget& target) {
  for (const auto* v : {&pred.delta_ee, &pred.grp_logits, &pred.q_obj, &pred.q_ee})
    if (!all_finite(*v)) throw std::invalid_argument("loss_eq1: non-finite prediction");
  return mse(pred.delta_ee, target.delta_ee) + cce(pred.grp_logits, target.grp_onehot) +
         mse(pred.q_obj, target.q_obj) + mse(pred.q_ee, target.q_ee);
}

inline void loss_eq1_backward(const HeadPrediction& pred, const HeadTarget& target,
                              double scale, HeadPrediction& grad) {
  mse_backward(pred.delta_ee, target.delta_ee, scale, grad.delta_ee);
  cce_backward(pred.grp_logits, target.grp_onehot, scale, grad.grp_logits);
  mse_backward(pred.q_obj, target.q_obj, scale, grad.q_obj);
  mse_backward(pred.q_ee, target.q_ee, scale, grad.q_ee);
}

}  // namespace ivmc::nn
