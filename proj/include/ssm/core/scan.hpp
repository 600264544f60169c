#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "ssm/core/coefficients.hpp"

namespace ssm {

inline constexpr std::size_t all_steps = std::numeric_limits<std::size_t>::max();

/// One elementwise update of the recurrence. Every real-valued scan in the
/// library goes through this expression so that taped and untaped passes
/// round identically.
inline double scan_update(double a, double h_prev, double delta, double b) noexcept {
  return a * h_prev + delta * b;
}

/// Sequential evaluation of h_t = a_t * h_{t-1} + delta_t b_t, y_t = c_t . h_t,
/// for the first `steps` steps (all by default).
StateTrajectory scan_recurrent(const StepCoefficients& coeffs, std::size_t steps = all_steps);

/// Closed form h_t = sum_{s<t} (prod_{r=s+1}^{t} a_r) delta_s b_s + delta_t b_t.
/// State channels whose gates are all positive reals use exp of prefix sums of
/// logs for the cumulative products; any other channel (complex, zero or
/// negative entries) multiplies directly.
StateTrajectory scan_parallel(const StepCoefficients& coeffs, std::size_t steps = all_steps);

/// Which path scan_parallel takes for state channel n.
enum class ProductPath { log_space, direct };
ProductPath product_path(const StepCoefficients& coeffs, std::size_t n, std::size_t steps = all_steps);

/// prod_{r=s+1}^{t} a_r[n] (1-based steps, s < t; s == t gives 1).
Complex cumulative_product(const StepCoefficients& coeffs, std::size_t n, std::size_t s, std::size_t t);

/// Scans every channel; outputs are the real parts of y, laid out T x D.
Matrix scan_outputs(const ChannelCoefficients& channels);

/// Largest |h_rec - h_par| over all states of two trajectories of equal shape.
double max_state_diff(const StateTrajectory& a, const StateTrajectory& b);

}  // namespace ssm
