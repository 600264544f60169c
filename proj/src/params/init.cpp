#include "ssm/params/init.hpp"

#include <cmath>
#include <random>
#include <string>

#include "ssm/core/numeric.hpp"

namespace ssm {
namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  Matrix normal(std::size_t rows, std::size_t cols, double scale) {
    std::normal_distribution<double> dist(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = dist(rng_);
    return m;
  }

  double log_uniform(double lo, double hi) {
    std::uniform_real_distribution<double> dist(std::log(lo), std::log(hi));
    return std::exp(dist(rng_));
  }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

 private:
  std::mt19937_64 rng_;
};

Matrix integer_rates(std::size_t channels, std::size_t free) {
  Matrix a(channels, free);
  for (std::size_t d = 0; d < channels; ++d) {
    for (std::size_t n = 0; n < free; ++n) a(d, n) = -static_cast<double>(n + 1);
  }
  return a;
}

}  // namespace

LayerParams init_params(Variant variant, std::size_t state_dim, std::size_t channels, std::uint64_t seed,
                        const PolarizationConfig& polarization) {
  if (channels == 0) throw ValidationError("init_params needs D >= 1");
  const std::size_t extra = polarization.extra_channels();
  const bool exp_family = variant == Variant::s4 || variant == Variant::mamba;
  if (extra > 0 && !exp_family) {
    throw ValidationError("polarization applies to s4 and mamba only, not " + std::string(variant_name(variant)));
  }
  if (state_dim < extra + 1) {
    throw ValidationError("state size " + std::to_string(state_dim) + " leaves no free channel next to " +
                          std::to_string(extra) + " polarized channel(s)");
  }
  const std::size_t free = state_dim - extra;
  const std::size_t D = channels;
  const std::size_t N = state_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  Sampler rng(seed);

  switch (variant) {
    case Variant::s4: {
      S4Params p;
      p.polarization = polarization;
      p.a_re = integer_rates(D, free);
      p.a_im = Matrix(D, free);
      p.b = rng.normal(D, N, scale);
      p.c = rng.normal(D, N, scale);
      p.delta = Matrix(D, 1);
      for (double& v : p.delta.flat()) v = rng.log_uniform(init_delta_min, init_delta_max);
      return p;
    }
    case Variant::mamba: {
      MambaParams p;
      p.polarization = polarization;
      p.a_diag = integer_rates(D, free);
      p.w_delta = rng.normal(D, D, scale);
      p.w_b = rng.normal(N, D, scale);
      p.w_c = rng.normal(N, D, scale);
      p.delta_bias = Matrix(D, 1);
      for (double& v : p.delta_bias.flat()) v = softplus_inverse(rng.log_uniform(init_delta_min, init_delta_max));
      return p;
    }
    default:
      break;
  }

  LamParams p;
  p.variant = variant;
  p.d_model = D;
  p.n_state = N;
  switch (variant) {
    case Variant::la:
    case Variant::retnet:
      p.w_k = rng.normal(N, D, scale);
      p.w_q = rng.normal(N, D, scale);
      p.w_v = rng.normal(D, D, scale);
      if (variant == Variant::retnet) p.gamma = Matrix(1, 1, 1.0 - 1.0 / 32.0);
      break;
    case Variant::gla:
      p.w_alpha = rng.normal(N, D, scale);
      p.b_alpha = Matrix(N, 1, 2.0);
      p.w_k = rng.normal(D * N, D, scale);
      p.w_q = rng.normal(D * N, D, scale);
      p.w_v = rng.normal(D, D, scale);
      break;
    case Variant::rwkv:
      p.w_decay = Matrix(D, 1);
      for (double& w : p.w_decay.flat()) w = rng.uniform(0.1, 2.0);
      p.w_k = rng.normal(D, D, scale);
      p.w_v = rng.normal(N, D, scale);
      p.w_q = rng.normal(N, D, scale);
      break;
    case Variant::griffin:
      // Griffin keeps one state per channel regardless of the requested size.
      p.n_state = 1;
      p.g_gamma = Matrix(D, 1);
      // alpha at r = 1/2 lands in [0.9, 0.999].
      for (double& g : p.g_gamma.flat()) {
        g = softplus_inverse(rng.uniform(-std::log(0.999), -std::log(0.9)) / (0.5 * p.xi));
      }
      p.w_a = rng.normal(D, D, scale);
      p.b_a = Matrix(D, 1);
      p.w_x = rng.normal(D, D, scale);
      p.b_x = Matrix(D, 1);
      break;
    default:
      break;
  }
  return p;
}

}  // namespace ssm
