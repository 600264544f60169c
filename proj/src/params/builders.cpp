#include "ssm/params/builders.hpp"

#include <cmath>
#include <string>

#include "ssm/core/numeric.hpp"
#include "ssm/core/scan.hpp"

namespace ssm {
namespace {

void check_input(const SequenceInput& x, std::size_t channels) {
  validate_sequence(x);
  if (x.cols() != channels) {
    throw ValidationError("input has " + std::to_string(x.cols()) + " channels, params expect " +
                          std::to_string(channels));
  }
}

Step blank_step(std::size_t n) {
  Step s;
  s.a.assign(n, Complex{});
  s.b.assign(n, 0.0);
  s.c.assign(n, 0.0);
  return s;
}

}  // namespace

ChannelCoefficients build_s4(const S4Params& params, const SequenceInput& x) {
  validate_params(params);
  check_input(x, params.channels());
  const std::size_t T = x.rows();
  const std::size_t N = params.state_dim();
  ChannelCoefficients out(params.channels());
  for (std::size_t d = 0; d < params.channels(); ++d) {
    const double delta = params.delta(d, 0);
    const auto diag = params.a_diag(d);
    std::vector<Complex> gate(N);
    for (std::size_t n = 0; n < N; ++n) {
      const Complex z = diag[n].value;
      gate[n] = z.imag() == 0.0 ? Complex(std::exp(delta * z.real()), 0.0) : std::exp(delta * z);
    }
    StepCoefficients& ch = out[d];
    for (std::size_t t = 0; t < T; ++t) {
      Step s = blank_step(N);
      s.a = gate;
      for (std::size_t n = 0; n < N; ++n) {
        s.b[n] = params.b(d, n) * x(t, d);
        s.c[n] = params.c(d, n);
      }
      s.delta = delta;
      ch.push_back(std::move(s));
    }
  }
  return out;
}

ChannelCoefficients build_mamba(const MambaParams& params, const SequenceInput& x) {
  validate_params(params);
  check_input(x, params.channels());
  const std::size_t T = x.rows();
  const std::size_t D = params.channels();
  const std::size_t N = params.state_dim();
  ChannelCoefficients out(D);
  std::vector<std::vector<double>> rates(D);
  for (std::size_t d = 0; d < D; ++d) rates[d] = params.effective_a(d);

  std::vector<double> wb(N), wc(N);
  for (std::size_t t = 0; t < T; ++t) {
    const auto xt = x.row(t);
    // Shared across channels.
    for (std::size_t n = 0; n < N; ++n) {
      wb[n] = dot_row(params.w_b, n, xt);
      wc[n] = dot_row(params.w_c, n, xt);
    }
    for (std::size_t d = 0; d < D; ++d) {
      const double delta = softplus(dot_row(params.w_delta, d, xt) + params.delta_bias(d, 0));
      Step s = blank_step(N);
      for (std::size_t n = 0; n < N; ++n) {
        s.a[n] = Complex(std::exp(delta * rates[d][n]), 0.0);
        s.b[n] = wb[n] * xt[d];
        s.c[n] = wc[n];
      }
      s.delta = delta;
      out[d].push_back(std::move(s));
    }
  }
  return out;
}

ChannelCoefficients build_lam(const LamParams& params, const SequenceInput& x) {
  validate_params(params);
  check_input(x, params.channels());
  const std::size_t T = x.rows();
  const std::size_t D = params.d_model;
  const std::size_t N = params.n_state;
  ChannelCoefficients out(D);

  std::vector<double> shared_a(N), shared_b(N), shared_c(N);
  for (std::size_t t = 0; t < T; ++t) {
    const auto xt = x.row(t);
    switch (params.variant) {
      case Variant::la:
      case Variant::retnet: {
        const double gate = params.variant == Variant::la ? 1.0 : params.gamma(0, 0);
        for (std::size_t n = 0; n < N; ++n) {
          shared_b[n] = dot_row(params.w_k, n, xt);
          shared_c[n] = dot_row(params.w_q, n, xt);
        }
        for (std::size_t d = 0; d < D; ++d) {
          Step s = blank_step(N);
          for (std::size_t n = 0; n < N; ++n) {
            s.a[n] = Complex(gate, 0.0);
            s.b[n] = shared_b[n];
            s.c[n] = shared_c[n];
          }
          s.delta = dot_row(params.w_v, d, xt);
          out[d].push_back(std::move(s));
        }
        break;
      }
      case Variant::gla: {
        for (std::size_t n = 0; n < N; ++n) shared_a[n] = sigmoid(dot_row(params.w_alpha, n, xt) + params.b_alpha(n, 0));
        for (std::size_t d = 0; d < D; ++d) {
          Step s = blank_step(N);
          for (std::size_t n = 0; n < N; ++n) {
            s.a[n] = Complex(shared_a[n], 0.0);
            s.b[n] = dot_row(params.w_k, d * N + n, xt);
            s.c[n] = dot_row(params.w_q, d * N + n, xt);
          }
          s.delta = dot_row(params.w_v, d, xt);
          out[d].push_back(std::move(s));
        }
        break;
      }
      case Variant::rwkv: {
        for (std::size_t n = 0; n < N; ++n) {
          shared_b[n] = dot_row(params.w_v, n, xt);
          shared_c[n] = dot_row(params.w_q, n, xt);
        }
        for (std::size_t d = 0; d < D; ++d) {
          // exp(-w) / (exp(-w) + exp(k)) = sigmoid(-(k + w))
          const double z = dot_row(params.w_k, d, xt) + params.w_decay(d, 0);
          Step s = blank_step(N);
          const double a = sigmoid(-z);
          for (std::size_t n = 0; n < N; ++n) {
            s.a[n] = Complex(a, 0.0);
            s.b[n] = shared_b[n];
            s.c[n] = shared_c[n];
          }
          s.delta = sigmoid(z);
          out[d].push_back(std::move(s));
        }
        break;
      }
      case Variant::griffin: {
        for (std::size_t d = 0; d < D; ++d) {
          const double r = sigmoid(dot_row(params.w_a, d, xt) + params.b_a(d, 0));
          const double log_alpha = (-params.xi * softplus(params.g_gamma(d, 0))) * r;
          const double alpha = std::exp(log_alpha);
          const double gate_in = sigmoid(dot_row(params.w_x, d, xt) + params.b_x(d, 0));
          Step s = blank_step(1);
          s.a[0] = Complex(alpha, 0.0);
          s.b[0] = gate_in * xt[d];
          s.c[0] = 1.0;
          s.delta = std::sqrt(1.0 - alpha * alpha);
          out[d].push_back(std::move(s));
        }
        break;
      }
      default:
        throw ValidationError("LAM params carry a non-LAM variant tag");
    }
  }
  return out;
}

ChannelCoefficients build_coefficients(const LayerParams& params, const SequenceInput& x) {
  if (const auto* s = std::get_if<S4Params>(&params)) return build_s4(*s, x);
  if (const auto* m = std::get_if<MambaParams>(&params)) return build_mamba(*m, x);
  return build_lam(std::get<LamParams>(params), x);
}

Matrix layer_forward(const LayerParams& params, const SequenceInput& x) {
  return scan_outputs(build_coefficients(params, x));
}

}  // namespace ssm
