#include "ssm/analysis/smoothness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ssm/core/diagnostics.hpp"
#include "ssm/core/scan.hpp"
#include "ssm/params/builders.hpp"
#include "ssm/params/init.hpp"

namespace ssm::analysis {

Smoothness smoothness(const Matrix& tokens) {
  const std::size_t T = tokens.rows();
  Smoothness s;
  double energy = 0.0;
  for (double v : tokens.flat()) energy += v * v;
  if (T < 2 || energy == 0.0) return s;

  double pairs = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    const auto xi = tokens.row(i);
    for (std::size_t j = 0; j < T; ++j) {
      if (i == j) continue;
      const auto xj = tokens.row(j);
      for (std::size_t k = 0; k < xi.size(); ++k) {
        const double d = xi[k] - xj[k];
        pairs += d * d;
      }
    }
  }
  s.epsilon = pairs / (2.0 * static_cast<double>(T - 1) * energy);
  s.defined = true;
  return s;
}

BoundReport oversmoothing_check(const StepCoefficients& coeffs) {
  const DiagnosticsReport diag = validate_coefficients(coeffs);
  BoundReport r;
  r.condition_equal = diag.condition_equal;
  r.condition_bounded = diag.condition_bounded;
  r.verdict = diag.any_condition();

  const std::size_t T = coeffs.steps();
  const std::size_t N = coeffs.state_dim();
  const StateTrajectory tr = scan_recurrent(coeffs);

  r.a_min = std::numeric_limits<double>::infinity();
  double b_gap = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    double h_lo = std::numeric_limits<double>::infinity(), h_hi = -h_lo;
    double b_lo = h_lo, b_hi = -h_lo;
    for (std::size_t t = 1; t <= T; ++t) {
      const double h = tr.state(t)[n].real();
      h_lo = std::min(h_lo, h);
      h_hi = std::max(h_hi, h);
      const Step& s = coeffs[t - 1];
      b_lo = std::min(b_lo, s.b[n]);
      b_hi = std::max(b_hi, s.b[n]);
      r.a_min = std::min(r.a_min, s.a[n].real());
    }
    r.lhs = std::max(r.lhs, h_hi - h_lo);
    b_gap = std::max(b_gap, b_hi - b_lo);
  }
  r.rhs = (1.0 - std::pow(r.a_min, static_cast<double>(T - 1))) * b_gap;
  r.satisfied = r.verdict && r.lhs <= r.rhs + bound_slack;
  return r;
}

SmoothingStack random_smoothing_stack(std::size_t depth, std::size_t state_dim, std::size_t channels,
                                      std::uint64_t seed, Variant variant) {
  SmoothingStack stack;
  for (std::size_t l = 0; l < depth; ++l) {
    stack.layers.push_back(init_params(variant, state_dim, channels, seed * 1000003ULL + l));
  }
  return stack;
}

Matrix rms_normalize(const Matrix& x, double eps) {
  Matrix y = x;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    double ms = 0.0;
    for (double v : x.row(t)) ms += v * v;
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(x.cols()) + eps);
    for (double& v : y.row(t)) v *= inv;
  }
  return y;
}

std::vector<LayerSmoothness> layerwise_smoothness(const SmoothingStack& stack, const SequenceInput& x) {
  validate_sequence(x);
  std::vector<LayerSmoothness> out;
  Matrix u = x;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const Matrix in = stack.pre_norm ? rms_normalize(u) : u;
    const ChannelCoefficients channels = build_coefficients(stack.layers[l], in);
    const std::size_t T = in.rows();
    const std::size_t D = channels.size();
    const std::size_t N = channels.front().state_dim();

    LayerSmoothness rep;
    rep.layer = l;
    Matrix encoded(T, D * N), states(T, D * N), mixer(T, D);
    rep.conditions_hold = true;
    rep.bound_satisfied = true;
    for (std::size_t d = 0; d < D; ++d) {
      const StateTrajectory tr = scan_recurrent(channels[d]);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t n = 0; n < N; ++n) {
          encoded(t, d * N + n) = channels[d][t].b[n];
          states(t, d * N + n) = tr.state(t + 1)[n].real();
        }
        mixer(t, d) = tr.output(t + 1).real();
      }
      rep.bounds.push_back(oversmoothing_check(channels[d]));
      rep.conditions_hold = rep.conditions_hold && rep.bounds.back().verdict;
      if (rep.bounds.back().verdict && !rep.bounds.back().satisfied) rep.bound_satisfied = false;
    }
    Matrix block = mixer;
    if (stack.residual) {
      for (std::size_t i = 0; i < block.size(); ++i) block.flat()[i] += u.flat()[i];
    }
    rep.encoded = smoothness(encoded);
    rep.states = smoothness(states);
    rep.mixer = smoothness(mixer);
    rep.block = smoothness(block);
    out.push_back(std::move(rep));
    u = std::move(block);
  }
  return out;
}

}  // namespace ssm::analysis
