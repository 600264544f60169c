#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ssm/core/matrix.hpp"
#include "ssm/grad/tape.hpp"
#include "ssm/params/params.hpp"

namespace ssm::grad {

/// Handles to the nodes one SSM layer leaves on a tape.
struct LayerNodes {
  std::vector<std::pair<std::string, Var>> params;  // trainable leaves, for_each_tensor order
  Var a, b, c, delta;                               // T x D x N (delta: T x D)
  Var y;                                            // T x D, output of the scan
};

/// Records one layer on `tape` applied to the T x D node `x`. S4 layers must
/// have real rates (a_im == 0) to be differentiated.
LayerNodes record_layer(Tape& tape, const LayerParams& params, Var x, bool params_need_grad = true);

/// Gradients of <cotangent, y> by input and by parameter name.
struct GradientSet {
  Matrix input;
  std::map<std::string, Matrix> params;
};

struct TapedForward {
  Tape tape;
  Var x;
  LayerNodes layer;
  Matrix outputs;
};

TapedForward forward_with_tape(const LayerParams& params, const SequenceInput& x);
/// Clears previous adjoints, then back-propagates `cotangent` (T x D).
GradientSet backward(TapedForward& fwd, const Matrix& cotangent);

/// (f(at + h e_rc) - f(at - h e_rc)) / 2h, elementwise over f's output.
Matrix central_difference(const std::function<Matrix(const Matrix&)>& f, const Matrix& at, std::size_t row,
                          std::size_t col, double h);

/// Input-component central difference of the untaped layer output.
Matrix finite_difference(const LayerParams& params, const SequenceInput& x, std::size_t t, std::size_t d,
                         double h = 1e-4);

/// Central-difference step for one parameter entry: `h`, except for the
/// time-invariant gates (S4 delta: h * |delta|; RetNet gamma: h * gamma / T).
double fd_step_for(const LayerParams& params, std::string_view tensor, double value, std::size_t steps, double h);

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
double relative_error(double analytic, double numeric) noexcept;

struct GradCheckRow {
  std::string variant;
  std::uint64_t seed = 0;
  std::string tensor;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline constexpr double fd_step = 1e-4;
inline constexpr double grad_tolerance = 1e-5;

/// Compares backward() with central differences of <cotangent, y> for the
/// input and every trainable tensor; one row per tensor ("x" for the input).
std::vector<GradCheckRow> gradient_check(const LayerParams& params, const SequenceInput& x, const Matrix& cotangent,
                                         std::uint64_t seed, double h = fd_step, double tolerance = grad_tolerance);

struct GradCheckCase {
  Variant variant = Variant::mamba;
  std::uint64_t seed = 0;
  std::size_t steps = 8;
  std::size_t state_dim = 4;
  std::size_t channels = 2;
  PolarizationConfig polarization;
};

/// Random model (initialized, then jittered off the init point), input and
/// cotangent derived from `c.seed`.
struct GradCheckInstance {
  LayerParams params;
  Matrix x;
  Matrix cotangent;
};
GradCheckInstance make_instance(const GradCheckCase& c);

void write_gradcheck_csv(std::ostream& out, const std::vector<GradCheckRow>& rows);

/// Decomposition of the loss gradient with respect to delta_t on a model
/// with both polarized channels.
struct PolarizedDeltaReport {
  double one_channel_term = 0.0;   // max |dl/da_1 * da_1/ddelta|
  double zero_channel_term = 0.0;  // max |dl/da_N * da_N/ddelta|
  double max_abs_diff = 0.0;       // total vs. drive + free-channel terms only
  double max_abs_grad = 0.0;
  double min_delta = 0.0;
  bool one_channel_exact_zero = false;
  bool zero_channel_negligible = false;  // zero_channel_term < 1e-300
};

PolarizedDeltaReport check_polarized_delta_gradient(const MambaParams& params, const SequenceInput& x,
                                                    const Matrix& cotangent);

}  // namespace ssm::grad
