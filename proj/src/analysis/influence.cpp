#include "ssm/analysis/influence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ssm/grad/layer.hpp"
#include "ssm/params/builders.hpp"

namespace ssm::analysis {

InfluenceMatrix influence_matrix(const LayerParams& params, const SequenceInput& x, std::size_t output_channel,
                                 ChannelAggregate aggregate) {
  validate_sequence(x);
  const std::size_t T = x.rows();
  const std::size_t D = x.cols();
  if (output_channel >= D) {
    throw ValidationError("output channel " + std::to_string(output_channel) + " out of range");
  }

  grad::Tape tape;
  const grad::Var xv = tape.leaf("x", {T, D}, x.values(), true);
  const grad::LayerNodes layer = grad::record_layer(tape, params, xv, false);

  InfluenceMatrix m;
  m.scores = Matrix(T, T);
  m.variant = variant_of(params);
  m.a_max = max_gate_modulus(params, x);
  m.output_channel = output_channel;
  m.aggregate = aggregate;

  std::vector<double> seed(T * D, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    tape.zero_grad();
    seed[t * D + output_channel] = 1.0;
    tape.backward(layer.y, seed);
    seed[t * D + output_channel] = 0.0;
    const std::vector<double> g = tape.grad(xv);
    for (std::size_t s = 0; s <= t; ++s) {
      double score = 0.0;
      for (std::size_t k = 0; k < D; ++k) {
        const double v = std::abs(g[s * D + k]);
        score = aggregate == ChannelAggregate::max ? std::max(score, v) : score + v * v;
      }
      m.scores(t, s) = aggregate == ChannelAggregate::max ? score : std::sqrt(score);
    }
  }
  return m;
}

double max_gate_modulus(const LayerParams& params, const SequenceInput& x) {
  double a_max = 0.0;
  for (const auto& ch : build_coefficients(params, x)) {
    for (const Step& s : ch.all()) {
      for (const Complex& a : s.a) a_max = std::max(a_max, std::abs(a));
    }
  }
  return a_max;
}

std::vector<double> upper_envelope(const InfluenceMatrix& m) {
  const std::size_t T = m.steps();
  std::vector<double> env(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s <= t; ++s) env[t - s] = std::max(env[t - s], m.scores(t, s));
  }
  return env;
}

DecayFit fit_decay_rate(const InfluenceMatrix& m, LagWindow window) {
  const std::size_t T = m.steps();
  if (T == 0) throw ValidationError("empty influence matrix");
  window.last = std::min(window.last, T - 1);
  if (window.first > window.last) throw ValidationError("lag window is empty");

  DecayFit fit;
  fit.window = window;
  fit.kappa_theory =
      m.a_max > 0.0 ? std::log(1.0 / m.a_max) : std::numeric_limits<double>::infinity();

  const std::vector<double> env = upper_envelope(m);
  std::vector<double> lags, logs;
  for (std::size_t lag = window.first; lag <= window.last; ++lag) {
    if (env[lag] > 0.0) {
      fit.log_envelope.push_back(std::log(env[lag]));
      lags.push_back(static_cast<double>(lag));
      logs.push_back(fit.log_envelope.back());
    } else {
      fit.log_envelope.push_back(-std::numeric_limits<double>::infinity());
      ++fit.excluded_zeros;
    }
  }
  fit.lags_used = lags.size();
  if (lags.empty()) return fit;
  if (lags.size() < 4) {
    throw ValidationError("decay fit needs at least 4 lags with positive scores, got " +
                          std::to_string(lags.size()));
  }

  const double n = static_cast<double>(lags.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lags.size(); ++i) {
    mx += lags[i];
    my += logs[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lags.size(); ++i) {
    const double dx = lags[i] - mx;
    const double dy = logs[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  fit.defined = true;
  fit.slope = sxy / sxx;
  fit.kappa_hat = -fit.slope;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < lags.size(); ++i) {
    const double r = logs[i] - (fit.intercept + fit.slope * lags[i]);
    ss_res += r * r;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  return fit;
}

}  // namespace ssm::analysis
