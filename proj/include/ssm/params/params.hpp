#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "ssm/core/coefficients.hpp"
#include "ssm/core/matrix.hpp"

namespace ssm {

enum class Variant : std::uint8_t { s4 = 0, mamba = 1, la = 2, retnet = 3, gla = 4, rwkv = 5, griffin = 6 };

inline constexpr Variant all_variants[] = {Variant::s4,  Variant::mamba, Variant::la,     Variant::retnet,
                                           Variant::gla, Variant::rwkv,  Variant::griffin};

std::string_view variant_name(Variant v);
/// Throws ValidationError on an unknown name.
Variant parse_variant(std::string_view name);

/// Pre-exponential rate of the channel polarized to zero. exp(delta * rate)
/// is negligible only once delta is well above 1e-2 (e.g. < 1e-300 needs
/// delta > 0.691).
inline constexpr double zero_channel_rate = -1000.0;

struct PolarizationConfig {
  bool one_channel = false;   // prepend rate 0 -> gate exactly 1
  bool zero_channel = false;  // append rate -1000 -> gate ~ 0

  std::size_t extra_channels() const noexcept { return (one_channel ? 1u : 0u) + (zero_channel ? 1u : 0u); }
  friend bool operator==(const PolarizationConfig&, const PolarizationConfig&) = default;
};

/// [0, A..., -1000] (or the one-sided variants). Entries of `pre_exp` must be
/// strictly negative.
std::vector<double> apply_polarization(std::span<const double> pre_exp, const PolarizationConfig& config);

/// Time-invariant diagonal SSM, one independent parameter set per channel.
/// a_t = exp(delta * A), b_t = b * x_t, c_t = c, delta_t = delta.
struct S4Params {
  Matrix a_re;   // D x N_free, strictly negative
  Matrix a_im;   // D x N_free
  Matrix b;      // D x N
  Matrix c;      // D x N
  Matrix delta;  // D x 1, in (0, 1]
  PolarizationConfig polarization;

  std::size_t channels() const noexcept { return b.rows(); }
  std::size_t state_dim() const noexcept { return b.cols(); }
  /// Pre-exponential diagonal of channel d (polarized entries included).
  std::vector<DiagonalEntry> a_diag(std::size_t d) const;
};

/// Selective SSM: delta_t = softplus(w_delta[d] . x_t + delta_bias[d]),
/// a_t = exp(delta_t A[d]), b_t = (W_B x_t) x_t[d], c_t = W_C x_t.
struct MambaParams {
  Matrix a_diag;      // D x N_free, strictly negative
  Matrix w_delta;     // D x D
  Matrix delta_bias;  // D x 1
  Matrix w_b;         // N x D
  Matrix w_c;         // N x D
  PolarizationConfig polarization;

  std::size_t channels() const noexcept { return w_delta.rows(); }
  std::size_t state_dim() const noexcept { return w_b.rows(); }
  std::vector<double> effective_a(std::size_t d) const;
};

/// Linear-attention family written as SSMs. Tensor shapes by variant:
///   LA, RetNet: w_k, w_q: N x D; w_v: D x D; gamma: 1 x 1 (RetNet)
///   GLA:        w_alpha: N x D, b_alpha: N x 1; w_k, w_q: (D*N) x D; w_v: D x D
///   RWKV:       w_decay: D x 1 (>= 0); w_k: D x D; w_v, w_q: N x D
///   Griffin:    g_gamma, b_a, b_x: D x 1; w_a, w_x: D x D; N = 1 per channel
struct LamParams {
  Variant variant = Variant::la;
  std::size_t d_model = 0;
  std::size_t n_state = 0;
  Matrix w_k, w_q, w_v;
  Matrix gamma;
  Matrix w_alpha, b_alpha;
  Matrix w_decay;
  Matrix g_gamma, w_a, b_a, w_x, b_x;
  double xi = 8.0;

  std::size_t channels() const noexcept { return d_model; }
  std::size_t state_dim() const noexcept { return n_state; }
};

using LayerParams = std::variant<S4Params, MambaParams, LamParams>;

Variant variant_of(const LayerParams& p);
std::size_t channels_of(const LayerParams& p);
std::size_t state_dim_of(const LayerParams& p);
PolarizationConfig polarization_of(const LayerParams& p);

/// Throws ValidationError if shapes or value constraints are violated.
void validate_params(const LayerParams& p);

/// Tensor slot by name (possibly empty), or nullptr if the parameterization has
/// no tensor of that name.
Matrix* find_tensor(LayerParams& p, std::string_view name);

/// Visits every non-empty tensor as (name, tensor, trainable).
template <class P, class F>
void for_each_tensor(P& params, F&& f) {
  auto visit = [&](std::string_view name, auto& m, bool trainable) {
    if (!m.empty()) f(name, m, trainable);
  };
  std::visit(
      [&](auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, S4Params>) {
          visit("a_re", p.a_re, true);
          visit("a_im", p.a_im, false);
          visit("b", p.b, true);
          visit("c", p.c, true);
          visit("delta", p.delta, true);
        } else if constexpr (std::is_same_v<T, MambaParams>) {
          visit("a_diag", p.a_diag, true);
          visit("w_delta", p.w_delta, true);
          visit("delta_bias", p.delta_bias, true);
          visit("w_b", p.w_b, true);
          visit("w_c", p.w_c, true);
        } else {
          visit("w_k", p.w_k, true);
          visit("w_q", p.w_q, true);
          visit("w_v", p.w_v, true);
          visit("gamma", p.gamma, true);
          visit("w_alpha", p.w_alpha, true);
          visit("b_alpha", p.b_alpha, true);
          visit("w_decay", p.w_decay, true);
          visit("g_gamma", p.g_gamma, true);
          visit("w_a", p.w_a, true);
          visit("b_a", p.b_a, true);
          visit("w_x", p.w_x, true);
          visit("b_x", p.b_x, true);
        }
      },
      params);
}

}  // namespace ssm
