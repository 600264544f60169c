#include "ssm/analysis/report.hpp"

#include <cmath>
#include <limits>
#include <ostream>

namespace ssm::analysis {
namespace {

// JSON has no infinities; they become null.
nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

class PrecisionGuard {
 public:
  explicit PrecisionGuard(std::ostream& out)
      : out_(out), old_(out.precision(std::numeric_limits<double>::max_digits10)) {}
  ~PrecisionGuard() { out_.precision(old_); }

 private:
  std::ostream& out_;
  std::streamsize old_;
};

nlohmann::json smoothness_json(const Smoothness& s) { return s.defined ? number(s.epsilon) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const DecayFit& fit) {
  return {{"defined", fit.defined},
          {"slope", fit.slope},
          {"kappa_hat", fit.kappa_hat},
          {"intercept", fit.intercept},
          {"r_squared", fit.r_squared},
          {"kappa_theory", number(fit.kappa_theory)},
          {"lag_first", fit.window.first},
          {"lag_last", fit.window.last},
          {"lags_used", fit.lags_used},
          {"excluded_zeros", fit.excluded_zeros}};
}

nlohmann::json to_json(const BoundReport& r) {
  nlohmann::json j = {{"lhs", r.lhs},
                      {"rhs", r.rhs},
                      {"a_min", number(r.a_min)},
                      {"condition_equal", r.condition_equal},
                      {"condition_bounded", r.condition_bounded},
                      {"verdict", r.verdict}};
  j["satisfied"] = r.verdict ? nlohmann::json(r.satisfied) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const LayerSmoothness& r) {
  nlohmann::json bounds = nlohmann::json::array();
  for (const auto& b : r.bounds) bounds.push_back(to_json(b));
  return {{"layer", r.layer},
          {"encoded", smoothness_json(r.encoded)},
          {"states", smoothness_json(r.states)},
          {"mixer", smoothness_json(r.mixer)},
          {"block", smoothness_json(r.block)},
          {"conditions_hold", r.conditions_hold},
          {"bound_satisfied", r.bound_satisfied},
          {"bounds", bounds}};
}

nlohmann::json to_json(const FrequencyResponse& r) {
  nlohmann::json cut = nlohmann::json::array();
  for (std::size_t i = 0; i < r.epsilons.size(); ++i) {
    cut.push_back({{"epsilon", r.epsilons[i]},
                   {"cutoff", r.cutoffs[i]},
                   {"magnitude_at_cutoff", r.at_cutoff[i]},
                   {"below_epsilon", static_cast<bool>(r.below_eps[i])}});
  }
  return {{"a_max", r.a_max},
          {"b_norm", r.b_norm},
          {"c_norm", r.c_norm},
          {"grid_points", r.omega.size()},
          {"decay_bound_holds", r.decay_bound_holds},
          {"cutoffs", cut}};
}

nlohmann::json to_json(const GateGapHistogram& h) {
  return {{"gates", h.gaps.size()},
          {"edges", h.edges},
          {"cumulative", h.cumulative},
          {"share_below_half", h.share_below_half}};
}

nlohmann::json to_json(const InfluenceMatrix& m, const DecayFit& fit) {
  return {{"variant", std::string(variant_name(m.variant))},
          {"steps", m.steps()},
          {"output_channel", m.output_channel},
          {"aggregate", m.aggregate == ChannelAggregate::max ? "max" : "l2"},
          {"a_max", m.a_max},
          {"fit", to_json(fit)}};
}

void write_influence_csv(std::ostream& out, const InfluenceMatrix& m) {
  PrecisionGuard g(out);
  out << "t,s,lag,score\n";
  for (std::size_t t = 0; t < m.steps(); ++t) {
    for (std::size_t s = 0; s <= t; ++s) out << t + 1 << ',' << s + 1 << ',' << t - s << ',' << m.scores(t, s) << '\n';
  }
}

void write_decay_csv(std::ostream& out, const DecayFit& fit) {
  PrecisionGuard g(out);
  out << "lag,log_env\n";
  for (std::size_t i = 0; i < fit.log_envelope.size(); ++i) {
    const double v = fit.log_envelope[i];
    out << fit.window.first + i << ',';
    if (std::isfinite(v)) {
      out << v;
    } else {
      out << "-inf";
    }
    out << '\n';
  }
}

void write_smoothness_csv(std::ostream& out, std::span<const LayerSmoothness> layers) {
  PrecisionGuard g(out);
  out << "layer,probe,epsilon\n";
  auto row = [&](std::size_t layer, const char* probe, const Smoothness& s) {
    out << layer << ',' << probe << ',';
    if (s.defined) {
      out << s.epsilon;
    } else {
      out << "nan";
    }
    out << '\n';
  };
  for (const auto& l : layers) {
    row(l.layer, "encoded", l.encoded);
    row(l.layer, "states", l.states);
    row(l.layer, "mixer", l.mixer);
    row(l.layer, "block", l.block);
  }
}

void write_bound_csv(std::ostream& out, std::span<const BoundReport> reports) {
  PrecisionGuard g(out);
  out << "instance,lhs,rhs,satisfied\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out << i << ',' << r.lhs << ',' << r.rhs << ',' << (r.verdict ? (r.satisfied ? "1" : "0") : "") << '\n';
  }
}

void write_spectrum_csv(std::ostream& out, const FrequencyResponse& r) {
  PrecisionGuard g(out);
  out << "omega,magnitude\n";
  for (std::size_t i = 0; i < r.omega.size(); ++i) out << r.omega[i] << ',' << r.magnitude[i] << '\n';
}

void write_histogram_csv(std::ostream& out, const GateGapHistogram& h) {
  PrecisionGuard g(out);
  out << "bin_edge,cumulative\n";
  for (std::size_t i = 0; i < h.edges.size(); ++i) out << h.edges[i] << ',' << h.cumulative[i] << '\n';
}

}  // namespace ssm::analysis
