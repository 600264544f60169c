#include "ssm/core/serialize.hpp"

#include <bit>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>

namespace ssm::io {

void BinaryWriter::header(const ContainerHeader& h) {
  out_.write(magic.data(), magic.size());
  u32(h.version);
  u8(static_cast<std::uint8_t>(h.kind));
  u8(h.tag);
  u8(h.mode);
  u8(0);
  u64(h.steps);
  u64(h.state_dim);
  u64(h.channels);
}

void BinaryWriter::u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }

void BinaryWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void BinaryWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryReader::read(char* dst, std::size_t n) {
  in_.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("unexpected end of binary container");
}

ContainerHeader BinaryReader::header(PayloadKind kind) {
  std::array<char, 4> m{};
  read(m.data(), m.size());
  if (m != magic) throw FormatError("bad magic: not an SSMB container");
  ContainerHeader h;
  h.version = u32();
  if (h.version != format_version) throw FormatError("unsupported container version " + std::to_string(h.version));
  h.kind = static_cast<PayloadKind>(u8());
  if (h.kind != kind) {
    throw FormatError("container holds payload kind " + std::to_string(static_cast<int>(h.kind)) + ", expected " +
                      std::to_string(static_cast<int>(kind)));
  }
  h.tag = u8();
  h.mode = u8();
  u8();
  h.steps = u64();
  h.state_dim = u64();
  h.channels = u64();
  return h;
}

std::uint8_t BinaryReader::u8() {
  char c = 0;
  read(&c, 1);
  return static_cast<std::uint8_t>(c);
}

std::uint32_t BinaryReader::u32() {
  std::array<char, 4> b{};
  read(b.data(), b.size());
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::array<char, 8> b{};
  read(b.data(), b.size());
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
  const std::uint32_t n = u32();
  std::string s(n, '\0');
  read(s.data(), n);
  return s;
}

void write_coefficients(std::ostream& out, const ChannelCoefficients& channels) {
  if (channels.empty()) throw ValidationError("no channels to write");
  const std::size_t T = channels.front().steps();
  const std::size_t N = channels.front().state_dim();
  bool complex = false;
  for (const auto& ch : channels) {
    ch.check_shape();
    if (ch.steps() != T || ch.state_dim() != N) throw ValidationError("channels disagree on T or N");
    complex = complex || !ch.is_real();
  }
  BinaryWriter w(out);
  w.header({format_version, PayloadKind::coefficients, 0, static_cast<std::uint8_t>(complex ? mode_complex : 0), T, N,
            channels.size()});
  for (const auto& ch : channels) {
    for (std::size_t t = 0; t < T; ++t) {
      const Step& s = ch[t];
      for (const auto& a : s.a) {
        w.f64(a.real());
        if (complex) w.f64(a.imag());
      }
      for (double b : s.b) w.f64(b);
      for (double c : s.c) w.f64(c);
      w.f64(s.delta);
    }
  }
}

ChannelCoefficients read_coefficients(std::istream& in) {
  BinaryReader r(in);
  const ContainerHeader h = r.header(PayloadKind::coefficients);
  const bool complex = (h.mode & mode_complex) != 0;
  ChannelCoefficients channels(h.channels);
  for (auto& ch : channels) {
    ch = StepCoefficients::zeros(h.steps, h.state_dim);
    for (std::size_t t = 0; t < h.steps; ++t) {
      Step& s = ch[t];
      for (auto& a : s.a) {
        const double re = r.f64();
        a = Complex(re, complex ? r.f64() : 0.0);
      }
      for (auto& b : s.b) b = r.f64();
      for (auto& c : s.c) c = r.f64();
      s.delta = r.f64();
    }
  }
  return channels;
}

void write_trajectories(std::ostream& out, const std::vector<StateTrajectory>& channels) {
  if (channels.empty()) throw ValidationError("no trajectories to write");
  const std::size_t T = channels.front().steps;
  const std::size_t N = channels.front().state_dim;
  bool complex = false;
  for (const auto& tr : channels) {
    if (tr.steps != T || tr.state_dim != N) throw ValidationError("trajectories disagree on T or N");
    for (const auto& h : tr.states) complex = complex || h.imag() != 0.0;
    for (const auto& y : tr.outputs) complex = complex || y.imag() != 0.0;
  }
  BinaryWriter w(out);
  w.header({format_version, PayloadKind::trajectory, 0, static_cast<std::uint8_t>(complex ? mode_complex : 0), T, N,
            channels.size()});
  auto put = [&](Complex v) {
    w.f64(v.real());
    if (complex) w.f64(v.imag());
  };
  for (const auto& tr : channels) {
    for (const auto& h : tr.states) put(h);
    for (const auto& y : tr.outputs) put(y);
  }
}

std::vector<StateTrajectory> read_trajectories(std::istream& in) {
  BinaryReader r(in);
  const ContainerHeader h = r.header(PayloadKind::trajectory);
  const bool complex = (h.mode & mode_complex) != 0;
  auto get = [&]() {
    const double re = r.f64();
    return Complex(re, complex ? r.f64() : 0.0);
  };
  std::vector<StateTrajectory> out(h.channels);
  for (auto& tr : out) {
    tr.steps = h.steps;
    tr.state_dim = h.state_dim;
    tr.states.resize((h.steps + 1) * h.state_dim);
    tr.outputs.resize(h.steps);
    for (auto& v : tr.states) v = get();
    for (auto& v : tr.outputs) v = get();
  }
  return out;
}

void write_coefficients_csv(std::ostream& out, const StepCoefficients& coeffs, const StateTrajectory& trajectory) {
  const bool complex = !coeffs.is_real();
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  out << "t,n,a_re,a_im,b,c,delta,h" << (complex ? ",h_im" : "") << '\n';
  for (std::size_t t = 1; t <= trajectory.steps; ++t) {
    const Step& s = coeffs[t - 1];
    const auto h = trajectory.state(t);
    for (std::size_t n = 0; n < coeffs.state_dim(); ++n) {
      out << t << ',' << n << ',' << s.a[n].real() << ',' << s.a[n].imag() << ',' << s.b[n] << ',' << s.c[n] << ','
          << s.delta << ',' << h[n].real();
      if (complex) out << ',' << h[n].imag();
      out << '\n';
    }
  }
  out.precision(old_precision);
}

}  // namespace ssm::io
