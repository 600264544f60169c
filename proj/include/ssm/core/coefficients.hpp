#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ssm/core/matrix.hpp"

namespace ssm {

using Complex = std::complex<double>;

/// Discrete entries are post-exponential gates (modulus in [0, 1]); continuous
/// entries are pre-exponential rates (strictly negative real part).
enum class DomainMode : std::uint8_t { discrete = 0, continuous = 1 };

struct DiagonalEntry {
  Complex value{};
  DomainMode mode = DomainMode::discrete;

  bool is_real() const noexcept { return value.imag() == 0.0; }
  /// Mode constraint; `strict` asks for the open interval 0 < |a| < 1 in
  /// discrete mode, which the recency analysis requires.
  bool admissible(bool strict = false) const noexcept;
};

/// Coefficients (A_t, b_t(x_t), c_t, Delta_t) of one step of the recurrence
/// h_t = A_t h_{t-1} + Delta_t b_t, y_t = c_t . h_t for a single channel.
struct Step {
  std::vector<Complex> a;  // diagonal of A_t
  std::vector<double> b;   // encoded token b_t(x_t)
  std::vector<double> c;   // decoder weights
  double delta = 0.0;
};

/// Per-timestep coefficients of one scalar channel.
class StepCoefficients {
 public:
  StepCoefficients() = default;
  explicit StepCoefficients(std::vector<Step> steps) : steps_(std::move(steps)) {}

  /// T steps of state dimension N, all zero.
  static StepCoefficients zeros(std::size_t steps, std::size_t state_dim);

  std::size_t steps() const noexcept { return steps_.size(); }
  std::size_t state_dim() const noexcept { return steps_.empty() ? 0 : steps_.front().a.size(); }

  Step& operator[](std::size_t t) { return steps_[t]; }
  const Step& operator[](std::size_t t) const { return steps_[t]; }
  std::span<const Step> all() const noexcept { return steps_; }
  void push_back(Step s) { steps_.push_back(std::move(s)); }

  /// True when every A entry has zero imaginary part.
  bool is_real() const noexcept;

  /// Throws ValidationError naming the first step whose a/b/c lengths differ
  /// from step 0, or whose entries are not finite.
  void check_shape() const;

 private:
  std::vector<Step> steps_;
};

/// One StepCoefficients per token channel.
using ChannelCoefficients = std::vector<StepCoefficients>;

/// Memory states h_0..h_T (h_0 = 0) and decoded outputs y_1..y_T.
struct StateTrajectory {
  std::size_t steps = 0;
  std::size_t state_dim = 0;
  std::vector<Complex> states;   // (steps + 1) x state_dim
  std::vector<Complex> outputs;  // steps; outputs[t-1] = y_t

  std::span<const Complex> state(std::size_t t) const {
    return {states.data() + t * state_dim, state_dim};
  }
  Complex output(std::size_t t) const { return outputs[t - 1]; }
};

}  // namespace ssm
