#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ssm/core/coefficients.hpp"

namespace ssm {

inline constexpr double condition_tolerance = 1e-12;

/// Summary of one channel's coefficients against the modelling assumptions.
struct DiagnosticsReport {
  double a_max = 0.0;  // max_{t,n} |a_t[n]|
  double a_min = 0.0;  // min_{t,n} |a_t[n]|
  bool all_real = true;
  bool mode_ok = true;          // 0 <= |a| <= 1 everywhere
  bool strict_interior = true;  // 0 < |a| < 1 everywhere
  bool delta_positive = true;
  std::size_t mode_violations = 0;
  /// a_t[n] + delta_t == 1 for all t, n (within condition_tolerance).
  bool condition_equal = false;
  /// a_t[n] + delta_t <= 1 for all t, n, and min_t b_t[n] <= 0 <= max_t b_t[n].
  bool condition_bounded = false;
  bool sum_at_most_one = false;
  bool b_straddles_zero = false;
  std::vector<std::string> notes;

  bool any_condition() const noexcept { return condition_equal || condition_bounded; }
};

/// Never throws: malformed input is reported through mode_ok and notes.
DiagnosticsReport validate_coefficients(const StepCoefficients& coeffs);

}  // namespace ssm
