#include "ssm/grad/layer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include "ssm/grad/ops.hpp"
#include "ssm/params/builders.hpp"
#include "ssm/params/init.hpp"

namespace ssm::grad {
namespace {

Var param_leaf(Tape& tape, LayerNodes& nodes, std::string_view name, const Matrix& m, bool need_grad) {
  Var v = tape.leaf(std::string(name), {m.rows(), m.cols()}, m.values(), need_grad);
  nodes.params.emplace_back(std::string(name), v);
  return v;
}

Var polarized_rates(Tape& tape, Var free_rates, const PolarizationConfig& pol) {
  std::vector<double> lead, trail;
  if (pol.one_channel) lead.push_back(0.0);
  if (pol.zero_channel) trail.push_back(zero_channel_rate);
  return pad_columns(tape, free_rates, lead, trail);
}

void record_s4(Tape& tape, const S4Params& p, Var x, bool g, LayerNodes& out) {
  for (double v : p.a_im.flat()) {
    if (v != 0.0) throw ValidationError("differentiating S4 requires real rates (a_im == 0)");
  }
  const std::size_t T = tape.shape(x)[0];
  const Var a_re = param_leaf(tape, out, "a_re", p.a_re, g);
  const Var b = param_leaf(tape, out, "b", p.b, g);
  const Var c = param_leaf(tape, out, "c", p.c, g);
  const Var delta = param_leaf(tape, out, "delta", p.delta, g);
  out.delta = repeat_time(tape, delta, T);
  out.a = discretize(tape, out.delta, polarized_rates(tape, a_re, p.polarization));
  out.b = channel_scale(tape, b, x);
  out.c = broadcast_time(tape, c, T);
}

void record_mamba(Tape& tape, const MambaParams& p, Var x, bool g, LayerNodes& out) {
  const std::size_t D = p.channels();
  const Var a_diag = param_leaf(tape, out, "a_diag", p.a_diag, g);
  const Var w_delta = param_leaf(tape, out, "w_delta", p.w_delta, g);
  const Var delta_bias = param_leaf(tape, out, "delta_bias", p.delta_bias, g);
  const Var w_b = param_leaf(tape, out, "w_b", p.w_b, g);
  const Var w_c = param_leaf(tape, out, "w_c", p.w_c, g);
  out.delta = softplus(tape, add_bias(tape, matmul_t(tape, x, w_delta), delta_bias));
  out.a = discretize(tape, out.delta, polarized_rates(tape, a_diag, p.polarization));
  out.b = outer(tape, x, matmul_t(tape, x, w_b));
  out.c = expand_channels(tape, matmul_t(tape, x, w_c), D);
}

void record_lam(Tape& tape, const LamParams& p, Var x, bool g, LayerNodes& out) {
  const std::size_t T = tape.shape(x)[0];
  const std::size_t D = p.d_model;
  const std::size_t N = p.n_state;
  auto leaf = [&](std::string_view name, const Matrix& m) { return param_leaf(tape, out, name, m, g); };
  switch (p.variant) {
    case Variant::la:
    case Variant::retnet: {
      const Var w_k = leaf("w_k", p.w_k);
      const Var w_q = leaf("w_q", p.w_q);
      const Var w_v = leaf("w_v", p.w_v);
      const Var gate = p.variant == Variant::la ? tape.constant({1}, {1.0}) : leaf("gamma", p.gamma);
      out.a = fill(tape, gate, {T, D, N});
      out.b = expand_channels(tape, matmul_t(tape, x, w_k), D);
      out.c = expand_channels(tape, matmul_t(tape, x, w_q), D);
      out.delta = matmul_t(tape, x, w_v);
      break;
    }
    case Variant::gla: {
      const Var w_k = leaf("w_k", p.w_k);
      const Var w_q = leaf("w_q", p.w_q);
      const Var w_v = leaf("w_v", p.w_v);
      const Var w_alpha = leaf("w_alpha", p.w_alpha);
      const Var b_alpha = leaf("b_alpha", p.b_alpha);
      const Var alpha = sigmoid(tape, add_bias(tape, matmul_t(tape, x, w_alpha), b_alpha));
      out.a = expand_channels(tape, alpha, D);
      out.b = reshape(tape, matmul_t(tape, x, w_k), {T, D, N});
      out.c = reshape(tape, matmul_t(tape, x, w_q), {T, D, N});
      out.delta = matmul_t(tape, x, w_v);
      break;
    }
    case Variant::rwkv: {
      const Var w_k = leaf("w_k", p.w_k);
      const Var w_q = leaf("w_q", p.w_q);
      const Var w_v = leaf("w_v", p.w_v);
      const Var w_decay = leaf("w_decay", p.w_decay);
      const Var z = add_bias(tape, matmul_t(tape, x, w_k), w_decay);
      out.a = expand_state(tape, sigmoid(tape, neg(tape, z)), N);
      out.delta = sigmoid(tape, z);
      out.b = expand_channels(tape, matmul_t(tape, x, w_v), D);
      out.c = expand_channels(tape, matmul_t(tape, x, w_q), D);
      break;
    }
    case Variant::griffin: {
      const Var g_gamma = leaf("g_gamma", p.g_gamma);
      const Var w_a = leaf("w_a", p.w_a);
      const Var b_a = leaf("b_a", p.b_a);
      const Var w_x = leaf("w_x", p.w_x);
      const Var b_x = leaf("b_x", p.b_x);
      const Var r = sigmoid(tape, add_bias(tape, matmul_t(tape, x, w_a), b_a));
      const Var rate = repeat_time(tape, scale(tape, softplus(tape, g_gamma), -p.xi), T);
      const Var alpha = exp(tape, mul(tape, rate, r));
      const Var gate_in = sigmoid(tape, add_bias(tape, matmul_t(tape, x, w_x), b_x));
      out.a = reshape(tape, alpha, {T, D, 1});
      out.b = reshape(tape, mul(tape, gate_in, x), {T, D, 1});
      out.c = fill(tape, tape.constant({1}, {1.0}), {T, D, 1});
      out.delta = sqrt_one_minus_square(tape, alpha);
      break;
    }
    default:
      throw ValidationError("LAM params carry a non-LAM variant tag");
  }
}

Matrix to_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) { return Matrix(rows, cols, v); }

double weighted_sum(const Matrix& w, const Matrix& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += w.flat()[i] * y.flat()[i];
  return s;
}

}  // namespace

LayerNodes record_layer(Tape& tape, const LayerParams& params, Var x, bool params_need_grad) {
  validate_params(params);
  const Shape& xs = tape.shape(x);
  if (xs.size() != 2 || xs[1] != channels_of(params)) {
    throw ValidationError("layer input must be T x " + std::to_string(channels_of(params)));
  }
  LayerNodes out;
  if (const auto* s = std::get_if<S4Params>(&params)) {
    record_s4(tape, *s, x, params_need_grad, out);
  } else if (const auto* m = std::get_if<MambaParams>(&params)) {
    record_mamba(tape, *m, x, params_need_grad, out);
  } else {
    record_lam(tape, std::get<LamParams>(params), x, params_need_grad, out);
  }
  out.y = scan(tape, out.a, out.b, out.c, out.delta);
  return out;
}

TapedForward forward_with_tape(const LayerParams& params, const SequenceInput& x) {
  validate_sequence(x);
  TapedForward f;
  f.x = f.tape.leaf("x", {x.rows(), x.cols()}, x.values(), true);
  f.layer = record_layer(f.tape, params, f.x);
  f.outputs = to_matrix(f.tape.value(f.layer.y), x.rows(), x.cols());
  return f;
}

GradientSet backward(TapedForward& fwd, const Matrix& cotangent) {
  if (cotangent.rows() != fwd.outputs.rows() || cotangent.cols() != fwd.outputs.cols()) {
    throw ValidationError("cotangent must be " + std::to_string(fwd.outputs.rows()) + "x" +
                          std::to_string(fwd.outputs.cols()));
  }
  fwd.tape.zero_grad();
  fwd.tape.backward(fwd.layer.y, cotangent.flat());
  GradientSet g;
  g.input = to_matrix(fwd.tape.grad(fwd.x), fwd.outputs.rows(), fwd.outputs.cols());
  for (const auto& [name, v] : fwd.layer.params) {
    const Shape& s = fwd.tape.shape(v);
    g.params.emplace(name, to_matrix(fwd.tape.grad(v), s[0], s[1]));
  }
  return g;
}

Matrix central_difference(const std::function<Matrix(const Matrix&)>& f, const Matrix& at, std::size_t row,
                          std::size_t col, double h) {
  Matrix plus = at, minus = at;
  plus(row, col) += h;
  minus(row, col) -= h;
  const Matrix fp = f(plus);
  const Matrix fm = f(minus);
  Matrix out(fp.rows(), fp.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.flat()[i] = (fp.flat()[i] - fm.flat()[i]) / (2.0 * h);
  return out;
}

Matrix finite_difference(const LayerParams& params, const SequenceInput& x, std::size_t t, std::size_t d, double h) {
  if (!(h > 0.0)) throw ValidationError("finite-difference step must be positive");
  return central_difference([&](const Matrix& xx) { return layer_forward(params, xx); }, x, t, d, h);
}

double fd_step_for(const LayerParams& params, std::string_view tensor, double value, std::size_t steps, double h) {
  // Time-invariant gates enter as powers a^(t-s), so the loss curves on a
  // scale of value / T in them rather than on the unit scale.
  if (std::holds_alternative<S4Params>(params) && tensor == "delta") return h * std::abs(value);
  if (variant_of(params) == Variant::retnet && tensor == "gamma") {
    return h * std::abs(value) / static_cast<double>(std::max<std::size_t>(steps, 1));
  }
  return h;
}

double relative_error(double analytic, double numeric) noexcept {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

std::vector<GradCheckRow> gradient_check(const LayerParams& params, const SequenceInput& x, const Matrix& cotangent,
                                         std::uint64_t seed, double h, double tolerance) {
  auto fwd = forward_with_tape(params, x);
  const GradientSet g = backward(fwd, cotangent);
  const std::string variant(variant_name(variant_of(params)));
  std::vector<GradCheckRow> rows;

  auto finish = [&](std::string tensor, double worst) {
    rows.push_back({variant, seed, std::move(tensor), worst, worst < tolerance});
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t d = 0; d < x.cols(); ++d) {
      const Matrix dy = finite_difference(params, x, t, d, h);
      worst = std::max(worst, relative_error(g.input(t, d), weighted_sum(cotangent, dy)));
    }
  }
  finish("x", worst);

  for (const auto& [name, grad] : g.params) {
    LayerParams probe = params;
    Matrix* slot = find_tensor(probe, name);
    worst = 0.0;
    for (std::size_t i = 0; i < slot->size(); ++i) {
      const double orig = slot->flat()[i];
      const double step = fd_step_for(params, name, orig, x.rows(), h);
      slot->flat()[i] = orig + step;
      const Matrix yp = layer_forward(probe, x);
      slot->flat()[i] = orig - step;
      const Matrix ym = layer_forward(probe, x);
      slot->flat()[i] = orig;
      double num = 0.0;
      for (std::size_t k = 0; k < yp.size(); ++k) num += cotangent.flat()[k] * ((yp.flat()[k] - ym.flat()[k]) / (2.0 * step));
      worst = std::max(worst, relative_error(grad.flat()[i], num));
    }
    finish(name, worst);
  }
  return rows;
}

GradCheckInstance make_instance(const GradCheckCase& c) {
  GradCheckInstance inst;
  inst.params = init_params(c.variant, c.state_dim, c.channels, c.seed, c.polarization);
  std::mt19937_64 rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for_each_tensor(inst.params, [&](std::string_view name, Matrix& m, bool trainable) {
    if (!trainable) return;
    for (double& v : m.flat()) {
      if (name == "a_re" || name == "a_diag" || name == "w_decay" || name == "g_gamma") {
        v *= std::exp(0.2 * noise(rng));
      } else if (name == "delta") {
        v = std::min(1.0, v * std::exp(0.2 * noise(rng)));
      } else if (name == "gamma") {
        v = 0.5 + 0.45 * unit(rng);
      } else {
        v += 0.1 * noise(rng);
      }
    }
  });
  inst.x = Matrix(c.steps, c.channels);
  for (double& v : inst.x.flat()) v = noise(rng);
  inst.cotangent = Matrix(c.steps, c.channels);
  for (double& v : inst.cotangent.flat()) v = noise(rng);
  return inst;
}

void write_gradcheck_csv(std::ostream& out, const std::vector<GradCheckRow>& rows) {
  const auto old = out.precision(6);
  out << "variant,seed,tensor,max_rel_err,pass\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.seed << ',' << r.tensor << ',' << std::scientific << r.max_rel_err
        << std::defaultfloat << ',' << (r.pass ? 1 : 0) << '\n';
  }
  out.precision(old);
}

PolarizedDeltaReport check_polarized_delta_gradient(const MambaParams& params, const SequenceInput& x,
                                                    const Matrix& cotangent) {
  if (!params.polarization.one_channel || !params.polarization.zero_channel) {
    throw ValidationError("polarized delta check needs both polarization flags");
  }
  auto fwd = forward_with_tape(params, x);
  backward(fwd, cotangent);
  const Tape& tape = fwd.tape;
  const std::size_t T = x.rows(), D = params.channels(), N = params.state_dim();
  const auto& delta = tape.value(fwd.layer.delta);
  const auto& a = tape.value(fwd.layer.a);
  const auto& b = tape.value(fwd.layer.b);
  const std::vector<double> total = tape.grad(fwd.layer.delta);
  const std::vector<double> ga = tape.grad(fwd.layer.a);
  const std::vector<double> gb = tape.grad(fwd.layer.b);

  PolarizedDeltaReport r;
  r.min_delta = *std::min_element(delta.begin(), delta.end());
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      const std::vector<double> rates = params.effective_a(d);
      const double dt = delta[t * D + d];
      // Drive term: dl/dh_t . b_t, recovered from dl/db_t = dl/dh_t * delta_t.
      double drive = 0.0;
      double free_terms = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t i = (t * D + d) * N + n;
        drive += gb[i] * b[i] / dt;
        const double term = ga[i] * a[i] * rates[n];
        if (n == 0) {
          r.one_channel_term = std::max(r.one_channel_term, std::abs(term));
        } else if (n + 1 == N) {
          r.zero_channel_term = std::max(r.zero_channel_term, std::abs(term));
        } else {
          free_terms += term;
        }
      }
      const double g = total[t * D + d];
      r.max_abs_grad = std::max(r.max_abs_grad, std::abs(g));
      r.max_abs_diff = std::max(r.max_abs_diff, std::abs(g - (drive + free_terms)));
    }
  }
  r.one_channel_exact_zero = r.one_channel_term == 0.0;
  r.zero_channel_negligible = r.zero_channel_term < 1e-300;
  return r;
}

}  // namespace ssm::grad
