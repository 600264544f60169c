#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssm/core/coefficients.hpp"

namespace ssm::io {

// Binary container layout (all integers and floats little-endian):
//   magic "SSMB" | u32 version | u8 kind | u8 tag | u8 mode | u8 reserved
//   | u64 T | u64 N | u64 D | payload
// mode bit 0: complex A entries, bit 1: continuous-domain entries.

inline constexpr std::array<char, 4> magic{'S', 'S', 'M', 'B'};
inline constexpr std::uint32_t format_version = 1;

enum class PayloadKind : std::uint8_t { coefficients = 1, trajectory = 2, params = 3, dataset = 4, checkpoint = 5 };

inline constexpr std::uint8_t mode_complex = 0x1;
inline constexpr std::uint8_t mode_continuous = 0x2;

struct ContainerHeader {
  std::uint32_t version = format_version;
  PayloadKind kind = PayloadKind::coefficients;
  std::uint8_t tag = 0;
  std::uint8_t mode = 0;
  std::uint64_t steps = 0;
  std::uint64_t state_dim = 0;
  std::uint64_t channels = 0;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}
  void header(const ContainerHeader& h);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}
  /// Reads and validates magic/version; throws FormatError if `kind` differs.
  ContainerHeader header(PayloadKind kind);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();

 private:
  void read(char* dst, std::size_t n);
  std::istream& in_;
};

void write_coefficients(std::ostream& out, const ChannelCoefficients& channels);
ChannelCoefficients read_coefficients(std::istream& in);

void write_trajectories(std::ostream& out, const std::vector<StateTrajectory>& channels);
std::vector<StateTrajectory> read_trajectories(std::istream& in);

/// Columns t,n,a_re,a_im,b,c,delta,h with t 1-based. h is the real part of the
/// state; complex coefficient sets get a trailing h_im column.
void write_coefficients_csv(std::ostream& out, const StepCoefficients& coeffs,
                            const StateTrajectory& trajectory);

}  // namespace ssm::io
