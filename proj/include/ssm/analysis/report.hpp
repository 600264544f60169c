#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

#include "ssm/analysis/influence.hpp"
#include "ssm/analysis/smoothness.hpp"
#include "ssm/analysis/spectrum.hpp"

// Structured reports (JSON) and flat CSV tables for every analysis.

namespace ssm::analysis {

nlohmann::json to_json(const DecayFit& fit);
nlohmann::json to_json(const BoundReport& r);
nlohmann::json to_json(const LayerSmoothness& r);
nlohmann::json to_json(const FrequencyResponse& r);
nlohmann::json to_json(const GateGapHistogram& h);
nlohmann::json to_json(const InfluenceMatrix& m, const DecayFit& fit);

/// t,s,lag,score (1-based positions, s <= t)
void write_influence_csv(std::ostream& out, const InfluenceMatrix& m);
/// lag,log_env
void write_decay_csv(std::ostream& out, const DecayFit& fit);
/// layer,probe,epsilon with probes encoded, states, mixer, block
void write_smoothness_csv(std::ostream& out, std::span<const LayerSmoothness> layers);
/// instance,lhs,rhs,satisfied
void write_bound_csv(std::ostream& out, std::span<const BoundReport> reports);
/// omega,magnitude
void write_spectrum_csv(std::ostream& out, const FrequencyResponse& r);
/// bin_edge,cumulative
void write_histogram_csv(std::ostream& out, const GateGapHistogram& h);

}  // namespace ssm::analysis
