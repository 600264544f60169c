#include "ssm/analysis/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ssm/params/builders.hpp"

namespace ssm::analysis {

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi > lo) || count < 2) throw ValidationError("log grid needs 0 < lo < hi and count >= 2");
  std::vector<double> grid(count);
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t i = 0; i < count; ++i) {
    grid[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  grid.front() = lo;
  grid.back() = hi;
  return grid;
}

Complex transfer(std::span<const Complex> rates, std::span<const double> b, std::span<const double> c, double omega) {
  Complex z{};
  for (std::size_t n = 0; n < rates.size(); ++n) z += (c[n] * b[n]) / (Complex(0.0, omega) - rates[n]);
  return z;
}

FrequencyResponse frequency_response(std::span<const Complex> rates, std::span<const double> b,
                                     std::span<const double> c, std::span<const double> omega,
                                     std::span<const double> epsilons) {
  if (rates.empty() || b.size() != rates.size() || c.size() != rates.size()) {
    throw ValidationError("rates, b and c must have the same non-zero length");
  }
  for (std::size_t n = 0; n < rates.size(); ++n) {
    if (!(rates[n].real() < 0.0)) {
      throw ValidationError("rate " + std::to_string(n) + " has non-negative real part; the response diverges");
    }
  }
  FrequencyResponse r;
  r.omega.assign(omega.begin(), omega.end());
  r.epsilons.assign(epsilons.begin(), epsilons.end());
  for (const Complex& a : rates) r.a_max = std::max(r.a_max, std::abs(a));
  double bb = 0.0, cc = 0.0;
  for (std::size_t n = 0; n < rates.size(); ++n) {
    bb += b[n] * b[n];
    cc += c[n] * c[n];
  }
  r.b_norm = std::sqrt(bb);
  r.c_norm = std::sqrt(cc);
  const double gain = r.b_norm * r.c_norm;

  r.decay_bound_holds = true;
  for (double w : omega) {
    const double m = std::abs(transfer(rates, b, c, w));
    r.magnitude.push_back(m);
    if (w > r.a_max && m > gain / (w - r.a_max)) r.decay_bound_holds = false;
  }
  for (double eps : epsilons) {
    if (!(eps > 0.0)) throw ValidationError("epsilon must be positive");
    const double cutoff = gain / eps + r.a_max;
    const double at = std::abs(transfer(rates, b, c, cutoff));
    bool ok = at <= eps;
    for (std::size_t i = 0; i < omega.size(); ++i) {
      if (omega[i] >= cutoff && r.magnitude[i] > eps) ok = false;
    }
    r.cutoffs.push_back(cutoff);
    r.at_cutoff.push_back(at);
    r.below_eps.push_back(ok);
  }
  return r;
}

FrequencyResponse frequency_response(const S4Params& params, std::size_t channel, std::span<const double> omega,
                                     std::span<const double> epsilons) {
  if (channel >= params.channels()) throw ValidationError("channel out of range");
  std::vector<Complex> rates;
  for (const DiagonalEntry& e : params.a_diag(channel)) rates.push_back(e.value);
  return frequency_response(rates, params.b.row(channel), params.c.row(channel), omega, epsilons);
}

GateGapHistogram gate_gap_histogram(const LayerParams& params, std::span<const SequenceInput> inputs) {
  if (inputs.empty()) throw ValidationError("gate-gap histogram needs at least one input");
  const std::size_t D = channels_of(params);
  const std::size_t N = state_dim_of(params);
  std::vector<double> lo(D * N, std::numeric_limits<double>::infinity());
  std::vector<double> hi(D * N, -std::numeric_limits<double>::infinity());
  for (const SequenceInput& x : inputs) {
    const ChannelCoefficients channels = build_coefficients(params, x);
    for (std::size_t d = 0; d < D; ++d) {
      for (const Step& s : channels[d].all()) {
        for (std::size_t n = 0; n < N; ++n) {
          const double a = std::abs(s.a[n]);
          lo[d * N + n] = std::min(lo[d * N + n], a);
          hi[d * N + n] = std::max(hi[d * N + n], a);
        }
      }
    }
  }
  GateGapHistogram h;
  std::size_t below_half = 0;
  for (std::size_t i = 0; i < lo.size(); ++i) {
    h.gaps.push_back(hi[i] - lo[i]);
    if (h.gaps.back() < 0.5) ++below_half;
  }
  const double total = static_cast<double>(h.gaps.size());
  h.share_below_half = static_cast<double>(below_half) / total;
  for (int k = 0; k <= 10; ++k) {
    const double edge = k / 10.0;
    const auto count = std::count_if(h.gaps.begin(), h.gaps.end(), [&](double g) { return g <= edge; });
    h.edges.push_back(edge);
    h.cumulative.push_back(static_cast<double>(count) / total);
  }
  return h;
}

}  // namespace ssm::analysis
