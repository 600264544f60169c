#include "ssm/core/scan.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ssm {
namespace {

std::size_t resolve_steps(const StepCoefficients& coeffs, std::size_t steps) {
  coeffs.check_shape();
  if (steps == all_steps) return coeffs.steps();
  if (steps == 0 || steps > coeffs.steps()) {
    throw ValidationError("requested " + std::to_string(steps) + " steps but coefficients hold " +
                          std::to_string(coeffs.steps()));
  }
  return steps;
}

StateTrajectory empty_trajectory(std::size_t steps, std::size_t n) {
  StateTrajectory tr;
  tr.steps = steps;
  tr.state_dim = n;
  tr.states.assign((steps + 1) * n, Complex{});
  tr.outputs.assign(steps, Complex{});
  return tr;
}

void decode(const StepCoefficients& coeffs, StateTrajectory& tr) {
  const std::size_t n = tr.state_dim;
  for (std::size_t t = 1; t <= tr.steps; ++t) {
    const auto& c = coeffs[t - 1].c;
    const Complex* h = tr.states.data() + t * n;
    Complex y{};
    for (std::size_t i = 0; i < n; ++i) y += c[i] * h[i];
    tr.outputs[t - 1] = y;
  }
}

}  // namespace

StateTrajectory scan_recurrent(const StepCoefficients& coeffs, std::size_t steps) {
  const std::size_t T = resolve_steps(coeffs, steps);
  const std::size_t n = coeffs.state_dim();
  StateTrajectory tr = empty_trajectory(T, n);

  if (coeffs.is_real()) {
    std::vector<double> h(n, 0.0);
    for (std::size_t t = 1; t <= T; ++t) {
      const Step& s = coeffs[t - 1];
      double y = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        h[i] = scan_update(s.a[i].real(), h[i], s.delta, s.b[i]);
        tr.states[t * n + i] = Complex(h[i], 0.0);
        y += s.c[i] * h[i];
      }
      tr.outputs[t - 1] = Complex(y, 0.0);
    }
    return tr;
  }

  std::vector<Complex> h(n);
  for (std::size_t t = 1; t <= T; ++t) {
    const Step& s = coeffs[t - 1];
    for (std::size_t i = 0; i < n; ++i) {
      h[i] = s.a[i] * h[i] + s.delta * s.b[i];
      tr.states[t * n + i] = h[i];
    }
  }
  decode(coeffs, tr);
  return tr;
}

ProductPath product_path(const StepCoefficients& coeffs, std::size_t n, std::size_t steps) {
  const std::size_t T = std::min(steps, coeffs.steps());
  for (std::size_t t = 0; t < T; ++t) {
    const Complex a = coeffs[t].a[n];
    if (a.imag() != 0.0 || !(a.real() > 0.0)) return ProductPath::direct;
  }
  return ProductPath::log_space;
}

Complex cumulative_product(const StepCoefficients& coeffs, std::size_t n, std::size_t s, std::size_t t) {
  Complex p(1.0, 0.0);
  for (std::size_t r = s + 1; r <= t; ++r) p *= coeffs[r - 1].a[n];
  return p;
}

StateTrajectory scan_parallel(const StepCoefficients& coeffs, std::size_t steps) {
  const std::size_t T = resolve_steps(coeffs, steps);
  const std::size_t n = coeffs.state_dim();
  StateTrajectory tr = empty_trajectory(T, n);

  std::vector<double> log_prefix(T + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (product_path(coeffs, i, T) == ProductPath::log_space) {
      // prod_{r=s+1}^{t} a_r = exp(L_t - L_s) with L_t = sum_{r<=t} log a_r.
      for (std::size_t t = 1; t <= T; ++t) {
        log_prefix[t] = log_prefix[t - 1] + std::log(coeffs[t - 1].a[i].real());
      }
      for (std::size_t t = 1; t <= T; ++t) {
        double h = 0.0;
        for (std::size_t s = 1; s < t; ++s) {
          const Step& st = coeffs[s - 1];
          h += std::exp(log_prefix[t] - log_prefix[s]) * (st.delta * st.b[i]);
        }
        h += coeffs[t - 1].delta * coeffs[t - 1].b[i];
        tr.states[t * n + i] = Complex(h, 0.0);
      }
    } else {
      for (std::size_t t = 1; t <= T; ++t) {
        Complex h = coeffs[t - 1].delta * coeffs[t - 1].b[i];
        Complex weight(1.0, 0.0);
        for (std::size_t s = t - 1; s >= 1; --s) {
          weight *= coeffs[s].a[i];  // now prod_{r=s+1}^{t} a_r
          const Step& st = coeffs[s - 1];
          h += weight * (st.delta * st.b[i]);
        }
        tr.states[t * n + i] = h;
      }
    }
  }
  decode(coeffs, tr);
  return tr;
}

Matrix scan_outputs(const ChannelCoefficients& channels) {
  if (channels.empty()) throw ValidationError("no channels to scan");
  const std::size_t T = channels.front().steps();
  Matrix y(T, channels.size());
  for (std::size_t d = 0; d < channels.size(); ++d) {
    if (channels[d].steps() != T) {
      throw ValidationError("channel " + std::to_string(d) + " has a different step count");
    }
    const StateTrajectory tr = scan_recurrent(channels[d]);
    for (std::size_t t = 0; t < T; ++t) y(t, d) = tr.outputs[t].real();
  }
  return y;
}

double max_state_diff(const StateTrajectory& a, const StateTrajectory& b) {
  if (a.states.size() != b.states.size()) throw ValidationError("trajectory shapes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    worst = std::max(worst, std::abs(a.states[i] - b.states[i]));
  }
  return worst;
}

}  // namespace ssm
