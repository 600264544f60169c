#include "ssm/params/io.hpp"

#include <istream>
#include <ostream>

#include "ssm/core/serialize.hpp"

namespace ssm::io {

void write_params(std::ostream& out, const LayerParams& params) {
  validate_params(params);
  const PolarizationConfig pol = polarization_of(params);
  BinaryWriter w(out);
  w.header({format_version, PayloadKind::params, static_cast<std::uint8_t>(variant_of(params)), 0, 0,
            state_dim_of(params), channels_of(params)});
  w.u8(pol.one_channel ? 1 : 0);
  w.u8(pol.zero_channel ? 1 : 0);
  const auto* lam = std::get_if<LamParams>(&params);
  w.f64(lam ? lam->xi : 0.0);

  std::uint32_t count = 0;
  for_each_tensor(params, [&](std::string_view, const Matrix&, bool) { ++count; });
  w.u32(count);
  for_each_tensor(params, [&](std::string_view name, const Matrix& m, bool) {
    w.str(std::string(name));
    w.u64(m.rows());
    w.u64(m.cols());
    for (double v : m.flat()) w.f64(v);
  });
}

LayerParams read_params(std::istream& in) {
  BinaryReader r(in);
  const ContainerHeader h = r.header(PayloadKind::params);
  if (h.tag > static_cast<std::uint8_t>(Variant::griffin)) throw FormatError("unknown variant tag " + std::to_string(h.tag));
  const auto variant = static_cast<Variant>(h.tag);
  PolarizationConfig pol;
  pol.one_channel = r.u8() != 0;
  pol.zero_channel = r.u8() != 0;
  const double xi = r.f64();

  LayerParams params;
  if (variant == Variant::s4) {
    S4Params s4;
    s4.polarization = pol;
    params = s4;
  } else if (variant == Variant::mamba) {
    MambaParams mamba;
    mamba.polarization = pol;
    params = mamba;
  } else {
    LamParams lam;
    lam.variant = variant;
    lam.d_model = h.channels;
    lam.n_state = h.state_dim;
    lam.xi = xi;
    params = lam;
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    Matrix* slot = find_tensor(params, name);
    if (slot == nullptr) throw FormatError("unknown tensor '" + name + "' for " + std::string(variant_name(variant)));
    if (rows > (std::uint64_t{1} << 28) || cols > (std::uint64_t{1} << 28)) throw FormatError("tensor too large");
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = r.f64();
    *slot = std::move(m);
  }
  try {
    validate_params(params);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("params container is inconsistent: ") + e.what());
  }
  return params;
}

}  // namespace ssm::io
