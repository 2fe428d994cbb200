#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ivmc/common.hpp"

namespace ivmc {

// Row-major dense buffer of 64-bit reals. Everything numeric in the project
// lives in one of these or a plain std::vector<double>.
struct TensorBuffer {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  TensorBuffer() = default;
  explicit TensorBuffer(std::vector<std::size_t> s)
      : shape(std::move(s)), data(numel_of(shape), 0.0) {}
  TensorBuffer(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size())
      throw std::invalid_argument("TensorBuffer: shape/data size mismatch");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t numel() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool finite() const { return all_finite(data); }
};

inline void axpy(double a, const std::vector<double>& x, std::vector<double>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// y = W x, W is [rows x cols] row-major
inline void matvec(const std::vector<double>& w, std::size_t rows,
                   std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

// x_grad += W^T y_grad
inline void matvec_t(const std::vector<double>& w, std::size_t rows,
                     std::size_t cols, const double* y_grad, double* x_grad) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = y_grad[r];
    const double* wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) x_grad[c] += g * wr[c];
  }
}

// W_grad += y_grad x^T
inline void outer_acc(std::vector<double>& w_grad, std::size_t rows,
                      std::size_t cols, const double* y_grad, const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = y_grad[r];
    double* wr = w_grad.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) wr[c] += g * x[c];
  }
}

}  // namespace ivmc
