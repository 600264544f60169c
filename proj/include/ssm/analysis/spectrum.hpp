#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ssm/core/coefficients.hpp"
#include "ssm/core/matrix.hpp"
#include "ssm/params/params.hpp"

namespace ssm::analysis {

/// `count` points spaced evenly in log10 between `lo` and `hi` inclusive.
std::vector<double> log_grid(double lo = 1e-2, double hi = 1e4, std::size_t count = 256);

/// Continuous-time transfer function sum_n c_n b_n / (i omega - A_n).
Complex transfer(std::span<const Complex> rates, std::span<const double> b, std::span<const double> c, double omega);

struct FrequencyResponse {
  std::vector<double> omega;
  std::vector<double> magnitude;
  std::vector<double> epsilons;
  std::vector<double> cutoffs;     // b_norm * c_norm / eps + a_max
  std::vector<double> at_cutoff;   // |Z(cutoff)|
  std::vector<bool> below_eps;     // |Z| <= eps at the cutoff and every grid point beyond it
  double a_max = 0.0;              // max_n |A_n|
  double b_norm = 0.0;
  double c_norm = 0.0;
  bool decay_bound_holds = false;  // |Z(w)| <= b_norm c_norm / (w - a_max) for grid w > a_max
};

/// Response of one channel's continuous-time kernel. Rates must have strictly
/// negative real parts, which rules out a polarized unit channel.
FrequencyResponse frequency_response(std::span<const Complex> rates, std::span<const double> b,
                                     std::span<const double> c, std::span<const double> omega,
                                     std::span<const double> epsilons);
FrequencyResponse frequency_response(const S4Params& params, std::size_t channel, std::span<const double> omega,
                                     std::span<const double> epsilons);

/// Per (channel, state entry) spread max|a| - min|a| over all steps and inputs.
struct GateGapHistogram {
  std::vector<double> gaps;        // channel-major, D x N
  std::vector<double> edges;       // 0, 0.1, ..., 1.0
  std::vector<double> cumulative;  // share of gaps <= edge
  double share_below_half = 0.0;   // share of gaps < 0.5
};

GateGapHistogram gate_gap_histogram(const LayerParams& params, std::span<const SequenceInput> inputs);

}  // namespace ssm::analysis
