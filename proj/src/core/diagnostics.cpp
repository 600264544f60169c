#include "ssm/core/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ssm {

DiagnosticsReport validate_coefficients(const StepCoefficients& coeffs) {
  DiagnosticsReport r;
  try {
    coeffs.check_shape();
  } catch (const ValidationError& e) {
    r.mode_ok = false;
    r.strict_interior = false;
    r.notes.emplace_back(e.what());
    return r;
  }

  const std::size_t n = coeffs.state_dim();
  r.a_max = 0.0;
  r.a_min = std::numeric_limits<double>::infinity();
  bool sum_equal = true;
  bool sum_le = true;
  std::vector<double> b_lo(n, std::numeric_limits<double>::infinity());
  std::vector<double> b_hi(n, -std::numeric_limits<double>::infinity());

  for (std::size_t t = 0; t < coeffs.steps(); ++t) {
    const Step& s = coeffs[t];
    if (!(s.delta > 0.0)) r.delta_positive = false;
    for (std::size_t i = 0; i < n; ++i) {
      const DiagonalEntry e{s.a[i], DomainMode::discrete};
      const double m = std::abs(s.a[i]);
      r.a_max = std::max(r.a_max, m);
      r.a_min = std::min(r.a_min, m);
      if (!e.is_real()) r.all_real = false;
      if (!e.admissible(false)) {
        r.mode_ok = false;
        ++r.mode_violations;
      }
      if (!e.admissible(true)) r.strict_interior = false;
      const double sum = s.a[i].real() + s.delta;
      if (std::abs(sum - 1.0) > condition_tolerance) sum_equal = false;
      if (sum > 1.0 + condition_tolerance) sum_le = false;
      b_lo[i] = std::min(b_lo[i], s.b[i]);
      b_hi[i] = std::max(b_hi[i], s.b[i]);
    }
  }

  bool straddles = true;
  for (std::size_t i = 0; i < n; ++i) straddles = straddles && b_lo[i] <= 0.0 && b_hi[i] >= 0.0;

  // The smoothing bound needs real gates in [0, 1] and non-negative write
  // strengths on top of the two stated conditions.
  bool admissible_gates = r.all_real && r.mode_ok;
  for (std::size_t t = 0; t < coeffs.steps() && admissible_gates; ++t) {
    if (coeffs[t].delta < 0.0) admissible_gates = false;
    for (const auto& a : coeffs[t].a) admissible_gates = admissible_gates && a.real() >= 0.0;
  }

  r.sum_at_most_one = sum_le;
  r.b_straddles_zero = straddles;
  r.condition_equal = admissible_gates && sum_equal;
  r.condition_bounded = admissible_gates && sum_le && straddles;

  if (!r.mode_ok) r.notes.push_back(std::to_string(r.mode_violations) + " gate(s) outside [0, 1] in modulus");
  if (!r.delta_positive) r.notes.emplace_back("non-positive delta");
  if (!r.any_condition()) r.notes.emplace_back("neither smoothing condition holds");
  return r;
}

}  // namespace ssm
