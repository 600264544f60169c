#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ssm/core/coefficients.hpp"
#include "ssm/core/matrix.hpp"
#include "ssm/params/params.hpp"

namespace ssm::analysis {

/// Sharpness of a token sequence:
///   eps(x) = sum_{i != j} |x_i - x_j|^2 / (2 (T - 1) sum_i |x_i|^2).
struct Smoothness {
  double epsilon = 0.0;
  bool defined = false;  // false for all-zero tokens or T < 2
};

Smoothness smoothness(const Matrix& tokens);

/// Pairwise state gap against its smoothing bound for one channel.
struct BoundReport {
  double lhs = 0.0;    // max_{t,s} |h_t - h_s|_inf
  double rhs = 0.0;    // (1 - a_min^(T-1)) max_{t,s} |b_t - b_s|_inf
  double a_min = 0.0;  // min_{t,n} a_t[n]
  bool condition_equal = false;    // a + delta == 1 everywhere
  bool condition_bounded = false;  // a + delta <= 1 and b straddles zero per entry
  bool verdict = false;            // a condition holds, so the bound is claimed
  bool satisfied = false;          // verdict && lhs <= rhs + bound_slack
};

inline constexpr double bound_slack = 1e-12;

/// Runs the recurrence from h_0 = 0 and evaluates both sides of the bound.
/// Complex gates never satisfy a condition.
BoundReport oversmoothing_check(const StepCoefficients& coeffs);

/// Residual stack of SSM mixers: u_{l+1} = u_l + mixer_l(rmsnorm(u_l)).
struct SmoothingStack {
  std::vector<LayerParams> layers;
  bool residual = true;
  bool pre_norm = true;
};

/// `depth` RWKV-style mixers, which satisfy a + delta == 1 by construction.
SmoothingStack random_smoothing_stack(std::size_t depth, std::size_t state_dim, std::size_t channels,
                                      std::uint64_t seed, Variant variant = Variant::rwkv);

struct LayerSmoothness {
  std::size_t layer = 0;
  Smoothness encoded;  // b_t over every (channel, state entry)
  Smoothness states;   // h_t over every (channel, state entry)
  Smoothness mixer;
  Smoothness block;
  std::vector<BoundReport> bounds;  // one per channel
  bool conditions_hold = false;     // every channel has a verdict
  bool bound_satisfied = false;     // every channel with a verdict satisfies it
};

std::vector<LayerSmoothness> layerwise_smoothness(const SmoothingStack& stack, const SequenceInput& x);

/// Per-token root-mean-square normalization without a gain.
Matrix rms_normalize(const Matrix& x, double eps = 1e-6);

}  // namespace ssm::analysis
