#include "ssm/core/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace ssm {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ValidationError("matrix data has " + std::to_string(data_.size()) + " entries, expected " +
                          std::to_string(rows_ * cols_));
  }
}

void validate_sequence(const SequenceInput& x) {
  if (x.rows() == 0 || x.cols() == 0) {
    throw ValidationError("sequence must have T >= 1 and D >= 1");
  }
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t d = 0; d < x.cols(); ++d) {
      if (!std::isfinite(x(t, d))) {
        throw ValidationError("non-finite input at t=" + std::to_string(t) + ", d=" + std::to_string(d));
      }
    }
  }
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError("max_abs_diff: shape mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.flat()[i] - b.flat()[i]));
  }
  return worst;
}

}  // namespace ssm
