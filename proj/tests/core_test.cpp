#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ssm/core/diagnostics.hpp"
#include "ssm/core/scan.hpp"
#include "ssm/core/serialize.hpp"
#include "support.hpp"

namespace ssm {
namespace {

using testing::constant_coeffs;
using testing::GateKind;
using testing::random_coeffs;

TEST(Scan, TwoStepHandExample) {
  const auto c = constant_coeffs(2, 0.5, 1.0, {1.0, 2.0}, 1.0);
  for (const auto& tr : {scan_recurrent(c), scan_parallel(c)}) {
    EXPECT_EQ(tr.state(0)[0], Complex(0.0));
    EXPECT_EQ(tr.state(1)[0].real(), 1.0);
    EXPECT_EQ(tr.state(2)[0].real(), 2.5);
    EXPECT_EQ(tr.output(1).real(), 1.0);
    EXPECT_EQ(tr.output(2).real(), 2.5);
  }
}

TEST(Scan, ThreeStepGeometricSum) {
  const auto c = constant_coeffs(3, 0.5, 1.0, {1.0, 1.0, 1.0}, 1.0);
  // Unrolled by hand: h3 = a^2 b + a b + b.
  const double oracle = 0.5 * 0.5 * 1.0 + 0.5 * 1.0 + 1.0;
  EXPECT_DOUBLE_EQ(scan_parallel(c).state(3)[0].real(), oracle);
  EXPECT_DOUBLE_EQ(scan_recurrent(c).state(3)[0].real(), 1.75);
}

TEST(Scan, ComplexSingleProduct) {
  const Complex a = std::polar(0.5, M_PI / 4);
  const auto c = constant_coeffs(2, a, 1.0, {1.0, 1.0}, 1.0);
  const auto tr = scan_parallel(c);
  EXPECT_NEAR(std::abs(tr.state(2)[0] - (a + 1.0)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(scan_recurrent(c).state(2)[0] - (a + 1.0)), 0.0, 1e-15);
}

TEST(Scan, ZeroDriveGivesZeroTrajectory) {
  std::mt19937_64 rng(3);
  auto c = random_coeffs(rng, 20, 4, GateKind::complex);
  for (std::size_t t = 0; t < c.steps(); ++t) std::fill(c[t].b.begin(), c[t].b.end(), 0.0);
  const auto tr = scan_recurrent(c);
  for (const auto& h : tr.states) EXPECT_EQ(h, Complex(0.0));
  for (const auto& y : tr.outputs) EXPECT_EQ(y, Complex(0.0));
}

TEST(Scan, DimensionMismatchNamesStep) {
  auto c = constant_coeffs(4, 0.5, 1.0, {1, 1, 1, 1}, 1.0);
  c[2].b.push_back(0.0);
  try {
    scan_recurrent(c);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
}

TEST(Scan, StepCountBounds) {
  const auto c = constant_coeffs(3, 0.5, 1.0, {1, 1, 1}, 1.0);
  EXPECT_EQ(scan_recurrent(c, 2).steps, 2u);
  EXPECT_THROW(scan_recurrent(c, 4), ValidationError);
  EXPECT_THROW(scan_parallel(c, 0), ValidationError);
}

TEST(Scan, ParallelMatchesRecurrentOnRandomInstances) {
  std::mt19937_64 rng(20240611);
  double worst_real = 0.0;
  double worst_complex = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t T = testing::uniform_size(rng, 1, 128);
    const std::size_t N = testing::uniform_size(rng, 1, 32);
    const auto kind = static_cast<GateKind>(i % 3);
    const auto c = random_coeffs(rng, T, N, kind);
    const double diff = max_state_diff(scan_recurrent(c), scan_parallel(c));
    (kind == GateKind::complex ? worst_complex : worst_real) = std::max(
        kind == GateKind::complex ? worst_complex : worst_real, diff);
  }
  EXPECT_LT(worst_real, 1e-10);
  EXPECT_LT(worst_complex, 1e-8);
}

TEST(Scan, LogPathSurvivesLongSequences) {
  std::mt19937_64 rng(7);
  const auto c = random_coeffs(rng, 4096, 2, GateKind::positive);
  EXPECT_EQ(product_path(c, 0), ProductPath::log_space);
  EXPECT_LT(max_state_diff(scan_recurrent(c), scan_parallel(c)), 1e-10);
}

TEST(Scan, ExactZeroGateFallsBackToDirectProducts) {
  auto c = constant_coeffs(5, 0.5, 1.0, {1, 2, 3, 4, 5}, 1.0);
  c[2].a[0] = 0.0;
  EXPECT_EQ(product_path(c, 0), ProductPath::direct);
  const auto tr = scan_parallel(c);
  EXPECT_TRUE(std::isfinite(tr.state(5)[0].real()));
  EXPECT_LT(max_state_diff(scan_recurrent(c), tr), 1e-15);
  // The zero gate at step 3 erases everything before it.
  EXPECT_DOUBLE_EQ(tr.state(3)[0].real(), 3.0);
}

TEST(Scan, LinearInDrive) {
  std::mt19937_64 rng(11);
  auto c = random_coeffs(rng, 40, 6, GateKind::signed_real);
  const auto base = scan_recurrent(c);
  for (std::size_t t = 0; t < c.steps(); ++t) {
    for (double& b : c[t].b) b *= 4.0;
  }
  const auto scaled = scan_recurrent(c);
  for (std::size_t i = 0; i < base.states.size(); ++i) EXPECT_EQ(scaled.states[i], 4.0 * base.states[i]);
  for (std::size_t t = 0; t < base.outputs.size(); ++t) EXPECT_EQ(scaled.outputs[t], 4.0 * base.outputs[t]);
}

TEST(Scan, Causal) {
  std::mt19937_64 rng(12);
  auto c = random_coeffs(rng, 30, 5, GateKind::complex);
  const auto base = scan_recurrent(c);
  for (std::size_t t = 15; t < 30; ++t) {
    c[t].b[0] += 10.0;
    c[t].a[1] *= 0.5;
    c[t].c[2] = -3.0;
  }
  const auto changed = scan_recurrent(c);
  for (std::size_t t = 1; t <= 15; ++t) EXPECT_EQ(changed.output(t), base.output(t));
  EXPECT_NE(changed.output(16), base.output(16));
}

TEST(Scan, CumulativeProductsFavourNearTokens) {
  std::mt19937_64 rng(13);
  const auto c = random_coeffs(rng, 50, 4, GateKind::positive);
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t s = 0; s + 1 < 49; ++s) {
      EXPECT_LT(cumulative_product(c, n, s, 49).real(), cumulative_product(c, n, s + 1, 49).real());
    }
  }
}

TEST(Diagnostics, ConstantHalfSatisfiesEqualityCondition) {
  const auto c = constant_coeffs(6, 0.5, 0.5, {1, -1, 1, -1, 1, -1}, 1.0);
  const auto r = validate_coefficients(c);
  EXPECT_TRUE(r.condition_equal);
  EXPECT_EQ(r.a_max, 0.5);
  EXPECT_EQ(r.a_min, 0.5);
}

TEST(Diagnostics, OversizedSumFlagged) {
  const auto c = constant_coeffs(6, 0.9, 0.5, {1, -1, 1, -1, 1, -1}, 1.0);
  const auto r = validate_coefficients(c);
  EXPECT_FALSE(r.condition_equal);
  EXPECT_FALSE(r.condition_bounded);
  EXPECT_FALSE(r.any_condition());
  EXPECT_FALSE(r.notes.empty());
}

TEST(Diagnostics, BoundedConditionNeedsStraddlingDrive) {
  const auto pos = constant_coeffs(4, 0.3, 0.5, {1, 2, 3, 4}, 1.0);
  EXPECT_FALSE(validate_coefficients(pos).condition_bounded);
  const auto mixed = constant_coeffs(4, 0.3, 0.5, {1, -2, 3, 4}, 1.0);
  EXPECT_TRUE(validate_coefficients(mixed).condition_bounded);
}

TEST(Diagnostics, NeverThrowsOnMalformedInput) {
  auto c = constant_coeffs(3, 0.5, 0.5, {1, 1, 1}, 1.0);
  c[1].c.clear();
  DiagnosticsReport r;
  EXPECT_NO_THROW(r = validate_coefficients(c));
  EXPECT_FALSE(r.mode_ok);
  auto bad = constant_coeffs(3, 1.5, 0.5, {1, 1, 1}, 1.0);
  EXPECT_NO_THROW(r = validate_coefficients(bad));
  EXPECT_EQ(r.mode_violations, 3u);
}

TEST(Diagnostics, ExtremesMatchExhaustiveScan) {
  std::mt19937_64 rng(5);
  const auto c = random_coeffs(rng, 33, 7, GateKind::complex);
  double hi = -1.0, lo = 2.0;
  for (const auto& s : c.all()) {
    for (const auto& a : s.a) {
      hi = std::max(hi, std::abs(a));
      lo = std::min(lo, std::abs(a));
    }
  }
  const auto r = validate_coefficients(c);
  EXPECT_EQ(r.a_max, hi);
  EXPECT_EQ(r.a_min, lo);
  EXPECT_FALSE(r.all_real);
}

TEST(Serialize, CoefficientsRoundTrip) {
  std::mt19937_64 rng(8);
  ChannelCoefficients ch{random_coeffs(rng, 9, 3, GateKind::complex), random_coeffs(rng, 9, 3, GateKind::positive)};
  std::stringstream ss;
  io::write_coefficients(ss, ch);
  const auto back = io::read_coefficients(ss);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t d = 0; d < 2; ++d) {
    for (std::size_t t = 0; t < 9; ++t) {
      EXPECT_EQ(back[d][t].a, ch[d][t].a);
      EXPECT_EQ(back[d][t].b, ch[d][t].b);
      EXPECT_EQ(back[d][t].c, ch[d][t].c);
      EXPECT_EQ(back[d][t].delta, ch[d][t].delta);
    }
  }
}

TEST(Serialize, HeaderIsLittleEndian) {
  ChannelCoefficients ch{constant_coeffs(2, 0.5, 1.0, {1, 2}, 1.0)};
  std::stringstream ss;
  io::write_coefficients(ss, ch);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "SSMB");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // version, low byte first
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2u);  // T
  // 0.5 as IEEE-754: 0x3FE0000000000000, most significant byte last.
  EXPECT_EQ(static_cast<unsigned char>(bytes[36 + 7]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(bytes[36 + 6]), 0xE0u);
}

TEST(Serialize, RejectsWrongKindAndTruncation) {
  ChannelCoefficients ch{constant_coeffs(2, 0.5, 1.0, {1, 2}, 1.0)};
  std::stringstream ss;
  io::write_coefficients(ss, ch);
  std::stringstream copy(ss.str());
  EXPECT_THROW(io::read_trajectories(copy), io::FormatError);
  std::stringstream cut(ss.str().substr(0, 40));
  EXPECT_THROW(io::read_coefficients(cut), io::FormatError);
  std::stringstream junk("nope");
  EXPECT_THROW(io::read_coefficients(junk), io::FormatError);
}

TEST(Serialize, TrajectoryRoundTrip) {
  std::mt19937_64 rng(9);
  const auto c = random_coeffs(rng, 5, 2, GateKind::complex);
  std::vector<StateTrajectory> trs{scan_recurrent(c)};
  std::stringstream ss;
  io::write_trajectories(ss, trs);
  const auto back = io::read_trajectories(ss);
  EXPECT_EQ(back[0].states, trs[0].states);
  EXPECT_EQ(back[0].outputs, trs[0].outputs);
}

TEST(Serialize, CsvColumns) {
  const auto c = constant_coeffs(2, 0.5, 1.0, {1.0, 2.0}, 1.0);
  std::stringstream ss;
  io::write_coefficients_csv(ss, c, scan_recurrent(c));
  std::string header, row1, row2;
  std::getline(ss, header);
  std::getline(ss, row1);
  std::getline(ss, row2);
  EXPECT_EQ(header, "t,n,a_re,a_im,b,c,delta,h");
  EXPECT_EQ(row1, "1,0,0.5,0,1,1,1,1");
  EXPECT_EQ(row2, "2,0,0.5,0,2,1,1,2.5");
}

}  // namespace
}  // namespace ssm
