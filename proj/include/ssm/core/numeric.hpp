#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "ssm/core/matrix.hpp"

// Scalar kernels shared by the coefficient builders and the gradient tape.
// Both paths must evaluate the same expressions in the same order.

namespace ssm {

inline double softplus(double z) noexcept {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) noexcept { return y + std::log(-std::expm1(-y)); }

/// sum_k w(row, k) * x[k], accumulated left to right from zero.
inline double dot_row(const Matrix& w, std::size_t row, std::span<const double> x) noexcept {
  const double* wr = w.row(row).data();
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) acc += wr[k] * x[k];
  return acc;
}

}  // namespace ssm
