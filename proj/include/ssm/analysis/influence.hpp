#pragma once

#include <cstddef>
#include <vector>

#include "ssm/core/matrix.hpp"
#include "ssm/params/params.hpp"

namespace ssm::analysis {

/// How the per-input-channel magnitudes |dy_t[o] / dx_s[k]| collapse to one
/// score per (t, s).
enum class ChannelAggregate { max, l2 };

/// Lower-triangular T x T matrix of |dy_t / dx_s| for one output channel.
struct InfluenceMatrix {
  Matrix scores;  // (t, s), zero above the diagonal
  Variant variant = Variant::s4;
  double a_max = 0.0;  // max |a_t[n]| over the coefficients built for x
  std::size_t output_channel = 0;
  ChannelAggregate aggregate = ChannelAggregate::max;

  std::size_t steps() const noexcept { return scores.rows(); }
};

/// One backward pass per output position t, seeded at (t, output_channel).
InfluenceMatrix influence_matrix(const LayerParams& params, const SequenceInput& x, std::size_t output_channel = 0,
                                 ChannelAggregate aggregate = ChannelAggregate::max);

/// Largest |a_t[n]| over every channel, step and state entry.
double max_gate_modulus(const LayerParams& params, const SequenceInput& x);

/// Per-lag maximum over valid (t, s = t - lag) pairs; entry `lag` for
/// lag = 0..T-1.
std::vector<double> upper_envelope(const InfluenceMatrix& m);

/// Inclusive lag range; `last` is clamped to T - 1.
struct LagWindow {
  std::size_t first = 0;
  std::size_t last = static_cast<std::size_t>(-1);
};

struct DecayFit {
  bool defined = false;  // false when every score in the window is zero
  double slope = 0.0;    // d log(envelope) / d lag
  double kappa_hat = 0.0;  // -slope
  double intercept = 0.0;
  double r_squared = 0.0;
  double kappa_theory = 0.0;  // log(1 / a_max); +inf when a_max == 0
  LagWindow window;
  std::size_t lags_used = 0;
  std::size_t excluded_zeros = 0;
  std::vector<double> log_envelope;  // per lag in the window, -inf for zeros
};

/// Least-squares line through log(upper envelope) against lag. Throws
/// ValidationError when between one and three lags carry positive scores.
DecayFit fit_decay_rate(const InfluenceMatrix& m, LagWindow window = {});

}  // namespace ssm::analysis
