#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ssm/grad/tape.hpp"

// Differentiable sequence-level operations. Shapes are row-major; "T x D x N"
// means index (t * D + d) * N + n. Every forward evaluates the same scalar
// expression, in the same order, as the corresponding untaped code path.

namespace ssm::grad {

/// y[t][m] = sum_k w[m][k] x[t][k]   (x: T x K, w: M x K)
Var matmul_t(Tape& tape, Var x, Var w);
/// y[t][m] = x[t][m] + b[m]          (b holds M entries)
Var add_bias(Tape& tape, Var x, Var b);
Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var neg(Tape& tape, Var a);
/// y = c * a
Var scale(Tape& tape, Var a, double c);
Var exp(Tape& tape, Var a);
Var softplus(Tape& tape, Var a);
Var sigmoid(Tape& tape, Var a);
/// a * sigmoid(a)
Var silu(Tape& tape, Var a);
/// sqrt(1 - a^2)
Var sqrt_one_minus_square(Tape& tape, Var a);
Var reshape(Tape& tape, Var a, Shape shape);

/// p: D x 1 -> T x D with y[t][d] = p[d]
Var repeat_time(Tape& tape, Var p, std::size_t steps);
/// p: D x N -> T x D x N
Var broadcast_time(Tape& tape, Var p, std::size_t steps);
/// v: T x N -> T x D x N (shared across channels)
Var expand_channels(Tape& tape, Var v, std::size_t channels);
/// v: T x D -> T x D x N (shared across state entries)
Var expand_state(Tape& tape, Var v, std::size_t state_dim);
/// scalar (one element) -> `shape`
Var fill(Tape& tape, Var scalar, Shape shape);
/// a: D x F -> D x (F + lead.size() + trail.size()) with constant columns
/// prepended and appended. The constants never receive gradient.
Var pad_columns(Tape& tape, Var a, std::vector<double> lead, std::vector<double> trail);

/// exp(delta[t][d] * rate[d][n])   (delta: T x D, rate: D x N) -> T x D x N
Var discretize(Tape& tape, Var delta, Var rate);
/// p[d][n] * x[t][d]   (p: D x N, x: T x D) -> T x D x N
Var channel_scale(Tape& tape, Var p, Var x);
/// w[t][n] * x[t][d]   (x: T x D, w: T x N) -> T x D x N
Var outer(Tape& tape, Var x, Var w);

/// The recurrence h_t = a_t * h_{t-1} + delta_t b_t, y_t = c_t . h_t on every
/// channel. a, b, c: T x D x N; delta: T x D; output T x D. The node saves all
/// states h_0..h_T and contributes T records to the tape.
Var scan(Tape& tape, Var a, Var b, Var c, Var delta);
/// States h_1..h_T of a scan node as T x D x N.
std::vector<double> scan_states(const Tape& tape, Var scan_node);

/// Rows of `table` (V x D) at the given ids -> T x D.
Var embedding(Tape& tape, Var table, std::span<const std::uint32_t> ids);
/// x / sqrt(mean(x^2) + eps) * gain per row  (x: T x D, gain: D entries)
Var rmsnorm(Tape& tape, Var x, Var gain, double eps = 1e-6);
/// Depthwise causal convolution: y[t][d] = bias[d] + sum_j w[d][j] x[t-K+1+j][d]
/// with zeros before the start  (w: D x K, bias: D entries).
Var causal_conv(Tape& tape, Var x, Var w, Var bias);
/// weight * sum over masked t of -log softmax(logits[t])[target[t]]
/// (logits: T x V) -> scalar.
Var masked_cross_entropy(Tape& tape, Var logits, std::span<const std::uint32_t> targets,
                         std::span<const std::uint8_t> mask, double weight);

}  // namespace ssm::grad
