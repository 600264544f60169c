#include "ssm/core/coefficients.hpp"

#include <cmath>
#include <string>

namespace ssm {

bool DiagonalEntry::admissible(bool strict) const noexcept {
  if (mode == DomainMode::continuous) {
    return value.real() < 0.0;
  }
  const double m = std::abs(value);
  return strict ? (m > 0.0 && m < 1.0) : (m >= 0.0 && m <= 1.0);
}

StepCoefficients StepCoefficients::zeros(std::size_t steps, std::size_t state_dim) {
  std::vector<Step> out(steps);
  for (auto& s : out) {
    s.a.assign(state_dim, Complex{});
    s.b.assign(state_dim, 0.0);
    s.c.assign(state_dim, 0.0);
  }
  return StepCoefficients(std::move(out));
}

bool StepCoefficients::is_real() const noexcept {
  for (const auto& s : steps_) {
    for (const auto& a : s.a) {
      if (a.imag() != 0.0) return false;
    }
  }
  return true;
}

void StepCoefficients::check_shape() const {
  if (steps_.empty()) {
    throw ValidationError("coefficients have no steps");
  }
  const std::size_t n = steps_.front().a.size();
  if (n == 0) {
    throw ValidationError("state dimension must be at least 1");
  }
  for (std::size_t t = 0; t < steps_.size(); ++t) {
    const auto& s = steps_[t];
    if (s.a.size() != n || s.b.size() != n || s.c.size() != n) {
      throw ValidationError("dimension mismatch at step " + std::to_string(t + 1) + ": |a|=" +
                            std::to_string(s.a.size()) + " |b|=" + std::to_string(s.b.size()) +
                            " |c|=" + std::to_string(s.c.size()) + ", expected " + std::to_string(n));
    }
    bool finite = std::isfinite(s.delta);
    for (std::size_t i = 0; i < n && finite; ++i) {
      finite = std::isfinite(s.a[i].real()) && std::isfinite(s.a[i].imag()) && std::isfinite(s.b[i]) &&
               std::isfinite(s.c[i]);
    }
    if (!finite) {
      throw ValidationError("non-finite coefficient at step " + std::to_string(t + 1));
    }
  }
}

}  // namespace ssm
