#include "ssm/params/params.hpp"

#include <cmath>
#include <string>

namespace ssm {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ValidationError(std::string(name) + " must be " + std::to_string(rows) + "x" + std::to_string(cols) +
                          ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

void require_finite(const Matrix& m, std::string_view name) {
  for (double v : m.flat()) {
    if (!std::isfinite(v)) throw ValidationError(std::string(name) + " has a non-finite entry");
  }
}

void require_negative(const Matrix& m, const char* name) {
  for (double v : m.flat()) {
    if (!(v < 0.0)) throw ValidationError(std::string(name) + " entries must be strictly negative, got " + std::to_string(v));
  }
}

void validate(const S4Params& p) {
  const std::size_t d = p.channels();
  const std::size_t free = p.a_re.cols();
  require(d >= 1 && free >= 1, "S4 needs at least one channel and one free state");
  require_shape(p.a_re, d, free, "a_re");
  require_shape(p.a_im, d, free, "a_im");
  require_shape(p.b, d, free + p.polarization.extra_channels(), "b");
  require_shape(p.c, d, p.b.cols(), "c");
  require_shape(p.delta, d, 1, "delta");
  require_negative(p.a_re, "a_re");
  for (double v : p.delta.flat()) {
    require(v > 0.0 && v <= 1.0, "S4 delta must lie in (0, 1], got " + std::to_string(v));
  }
}

void validate(const MambaParams& p) {
  const std::size_t d = p.channels();
  const std::size_t free = p.a_diag.cols();
  require(d >= 1 && free >= 1, "Mamba needs at least one channel and one free state");
  const std::size_t n = free + p.polarization.extra_channels();
  require_shape(p.a_diag, d, free, "a_diag");
  require_shape(p.w_delta, d, d, "w_delta");
  require_shape(p.delta_bias, d, 1, "delta_bias");
  require_shape(p.w_b, n, d, "w_b");
  require_shape(p.w_c, n, d, "w_c");
  require_negative(p.a_diag, "a_diag");
}

void validate(const LamParams& p) {
  const std::size_t d = p.d_model;
  const std::size_t n = p.n_state;
  require(d >= 1 && n >= 1, "LAM needs d_model >= 1 and n_state >= 1");
  switch (p.variant) {
    case Variant::la:
    case Variant::retnet:
      require_shape(p.w_k, n, d, "w_k");
      require_shape(p.w_q, n, d, "w_q");
      require_shape(p.w_v, d, d, "w_v");
      if (p.variant == Variant::retnet) {
        require_shape(p.gamma, 1, 1, "gamma");
        require(p.gamma(0, 0) > 0.0 && p.gamma(0, 0) < 1.0, "RetNet gamma must lie in (0, 1)");
      }
      break;
    case Variant::gla:
      require_shape(p.w_alpha, n, d, "w_alpha");
      require_shape(p.b_alpha, n, 1, "b_alpha");
      require_shape(p.w_k, d * n, d, "w_k");
      require_shape(p.w_q, d * n, d, "w_q");
      require_shape(p.w_v, d, d, "w_v");
      break;
    case Variant::rwkv:
      require_shape(p.w_decay, d, 1, "w_decay");
      require_shape(p.w_k, d, d, "w_k");
      require_shape(p.w_v, n, d, "w_v");
      require_shape(p.w_q, n, d, "w_q");
      for (double w : p.w_decay.flat()) {
        require(w >= 0.0, "RWKV decay weight must be non-negative, got " + std::to_string(w));
      }
      break;
    case Variant::griffin:
      require(n == 1, "Griffin keeps one state per channel (n_state = 1)");
      require_shape(p.g_gamma, d, 1, "g_gamma");
      require_shape(p.w_a, d, d, "w_a");
      require_shape(p.b_a, d, 1, "b_a");
      require_shape(p.w_x, d, d, "w_x");
      require_shape(p.b_x, d, 1, "b_x");
      require(p.xi > 0.0 && std::isfinite(p.xi), "Griffin xi must be positive");
      break;
    default:
      throw ValidationError("LAM params carry a non-LAM variant tag");
  }
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::s4: return "s4";
    case Variant::mamba: return "mamba";
    case Variant::la: return "la";
    case Variant::retnet: return "retnet";
    case Variant::gla: return "gla";
    case Variant::rwkv: return "rwkv";
    case Variant::griffin: return "griffin";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : all_variants) {
    if (variant_name(v) == name) return v;
  }
  throw ValidationError("unknown variant '" + std::string(name) + "'");
}

std::vector<double> apply_polarization(std::span<const double> pre_exp, const PolarizationConfig& config) {
  std::vector<double> out;
  out.reserve(pre_exp.size() + config.extra_channels());
  if (config.one_channel) out.push_back(0.0);
  out.insert(out.end(), pre_exp.begin(), pre_exp.end());
  if (config.zero_channel) out.push_back(zero_channel_rate);
  return out;
}

std::vector<DiagonalEntry> S4Params::a_diag(std::size_t d) const {
  std::vector<DiagonalEntry> out;
  out.reserve(state_dim());
  if (polarization.one_channel) out.push_back({Complex(0.0, 0.0), DomainMode::continuous});
  for (std::size_t n = 0; n < a_re.cols(); ++n) {
    out.push_back({Complex(a_re(d, n), a_im(d, n)), DomainMode::continuous});
  }
  if (polarization.zero_channel) out.push_back({Complex(zero_channel_rate, 0.0), DomainMode::continuous});
  return out;
}

std::vector<double> MambaParams::effective_a(std::size_t d) const {
  return apply_polarization(a_diag.row(d), polarization);
}

Variant variant_of(const LayerParams& p) {
  if (std::holds_alternative<S4Params>(p)) return Variant::s4;
  if (std::holds_alternative<MambaParams>(p)) return Variant::mamba;
  return std::get<LamParams>(p).variant;
}

std::size_t channels_of(const LayerParams& p) {
  return std::visit([](const auto& q) { return q.channels(); }, p);
}

std::size_t state_dim_of(const LayerParams& p) {
  return std::visit([](const auto& q) { return q.state_dim(); }, p);
}

PolarizationConfig polarization_of(const LayerParams& p) {
  if (const auto* s = std::get_if<S4Params>(&p)) return s->polarization;
  if (const auto* m = std::get_if<MambaParams>(&p)) return m->polarization;
  return {};
}

void validate_params(const LayerParams& p) {
  std::visit([](const auto& q) { validate(q); }, p);
  for_each_tensor(p, [](std::string_view name, const Matrix& m, bool) { require_finite(m, name); });
}

Matrix* find_tensor(LayerParams& p, std::string_view name) {
  return std::visit(
      [&](auto& q) -> Matrix* {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, S4Params>) {
          if (name == "a_re") return &q.a_re;
          if (name == "a_im") return &q.a_im;
          if (name == "b") return &q.b;
          if (name == "c") return &q.c;
          if (name == "delta") return &q.delta;
        } else if constexpr (std::is_same_v<T, MambaParams>) {
          if (name == "a_diag") return &q.a_diag;
          if (name == "w_delta") return &q.w_delta;
          if (name == "delta_bias") return &q.delta_bias;
          if (name == "w_b") return &q.w_b;
          if (name == "w_c") return &q.w_c;
        } else {
          if (name == "w_k") return &q.w_k;
          if (name == "w_q") return &q.w_q;
          if (name == "w_v") return &q.w_v;
          if (name == "gamma") return &q.gamma;
          if (name == "w_alpha") return &q.w_alpha;
          if (name == "b_alpha") return &q.b_alpha;
          if (name == "w_decay") return &q.w_decay;
          if (name == "g_gamma") return &q.g_gamma;
          if (name == "w_a") return &q.w_a;
          if (name == "b_a") return &q.b_a;
          if (name == "w_x") return &q.w_x;
          if (name == "b_x") return &q.b_x;
        }
        return nullptr;
      },
      p);
}

}  // namespace ssm
