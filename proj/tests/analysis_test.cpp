#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ssm/analysis/influence.hpp"
#include "ssm/analysis/probe.hpp"
#include "ssm/analysis/report.hpp"
#include "ssm/analysis/smoothness.hpp"
#include "ssm/analysis/spectrum.hpp"
#include "ssm/core/numeric.hpp"
#include "ssm/grad/layer.hpp"
#include "ssm/params/builders.hpp"
#include "ssm/params/init.hpp"
#include "support.hpp"

namespace ssm::analysis {
namespace {

S4Params scalar_s4(double rate, double delta, double b, double c) {
  S4Params p;
  p.a_re = Matrix(1, 1, rate);
  p.a_im = Matrix(1, 1);
  p.b = Matrix(1, 1, b);
  p.c = Matrix(1, 1, c);
  p.delta = Matrix(1, 1, delta);
  return p;
}

TEST(Influence, ConstantGateRowIsGeometric) {
  const std::size_t T = 8;
  const auto p = scalar_s4(std::log(0.5), 1.0, 1.0, 1.0);
  const double a = std::exp(std::log(0.5));
  const auto m = influence_matrix(p, Matrix(T, 1, 0.3));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < T; ++s) {
      const double expected = s <= t ? std::pow(a, static_cast<double>(t - s)) : 0.0;
      EXPECT_NEAR(m.scores(t, s), expected, 1e-12);
    }
  }
  EXPECT_NEAR(m.scores(T - 1, T - 4), 0.125, 1e-12);
  EXPECT_NEAR(m.scores(T - 1, T - 3), 0.25, 1e-12);
  EXPECT_DOUBLE_EQ(m.a_max, a);

  const DecayFit fit = fit_decay_rate(m);
  ASSERT_TRUE(fit.defined);
  EXPECT_NEAR(fit.kappa_hat, std::log(2.0), 1e-12);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
  EXPECT_NEAR(fit.kappa_theory, std::log(2.0), 1e-12);
  EXPECT_EQ(fit.excluded_zeros, 0u);
}

TEST(Influence, MatchesFiniteDifferencesOnMamba) {
  const std::size_t T = 32, D = 3;
  auto inst = grad::make_instance({Variant::mamba, 21, T, 6, D, {}});
  const auto m = influence_matrix(inst.params, inst.x, 1);
  // Oracle: central differences of the untaped forward, max over input channels.
  Matrix oracle(T, T);
  for (std::size_t s = 0; s < T; ++s) {
    for (std::size_t k = 0; k < D; ++k) {
      const Matrix dy = grad::finite_difference(inst.params, inst.x, s, k, 1e-5);
      for (std::size_t t = s; t < T; ++t) oracle(t, s) = std::max(oracle(t, s), std::abs(dy(t, 1)));
    }
  }
  EXPECT_LT(max_abs_diff(m.scores, oracle), 1e-6);
}

TEST(Influence, LinearAttentionRowsShareOneProfile) {
  // With unit gates, row t is |q_t| times a profile that depends on s only.
  const std::size_t T = 24;
  const auto p = init_params(Variant::la, 4, 1, 5);
  std::mt19937_64 rng(5);
  const auto m = influence_matrix(p, testing::random_sequence(rng, T, 1));
  const std::size_t ref = T - 1;
  for (std::size_t t = 1; t < T; ++t) {
    const double ratio = m.scores(t, 0) / m.scores(ref, 0);
    for (std::size_t s = 0; s < t; ++s) EXPECT_NEAR(m.scores(t, s), ratio * m.scores(ref, s), 1e-10 * m.scores(t, 0));
  }
  const DecayFit fit = fit_decay_rate(influence_matrix(p, testing::random_sequence(rng, 256, 1)));
  EXPECT_NEAR(fit.kappa_theory, 0.0, 1e-15);
  EXPECT_LT(std::abs(fit.kappa_hat), 0.01);
}

TEST(Influence, MambaEnvelopeDecaysAtLeastAtTheGateRate) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto p = init_params(Variant::mamba, 16, 4, seed);
    std::mt19937_64 rng(seed);
    const auto m = influence_matrix(p, testing::random_sequence(rng, 256, 4));
    const DecayFit fit = fit_decay_rate(m);
    ASSERT_TRUE(fit.defined);
    EXPECT_LE(fit.slope, -fit.kappa_theory + 0.05) << seed;
  }
}

TEST(Influence, UnitChannelKeepsTailFlat) {
  // A polarized unit gate carries every past token forward undamped, so the
  // envelope levels off at c_1 b_1 delta once the other modes have decayed.
  auto p = std::get<S4Params>(init_params(Variant::s4, 6, 1, 8, {true, false}));
  p.delta(0, 0) = 1.0;
  const auto m = influence_matrix(p, Matrix(128, 1, 0.5));
  EXPECT_DOUBLE_EQ(m.a_max, 1.0);
  const DecayFit tail = fit_decay_rate(m, {64, 127});
  ASSERT_TRUE(tail.defined);
  EXPECT_NEAR(tail.kappa_hat, 0.0, 1e-9);
  EXPECT_EQ(tail.kappa_theory, 0.0);
  const double floor = std::abs(p.b(0, 0) * p.c(0, 0));
  for (std::size_t lag = 64; lag < 128; ++lag) EXPECT_NEAR(upper_envelope(m)[lag], floor, 1e-12);

  const auto plain = influence_matrix(init_params(Variant::s4, 6, 1, 8), Matrix(128, 1, 0.5));
  EXPECT_GT(fit_decay_rate(plain, {64, 127}).kappa_hat, 1e-3);
}

TEST(DecayFit, ZeroScoresAreExcludedAndCounted) {
  InfluenceMatrix m;
  m.scores = Matrix(8, 8);
  m.a_max = 0.5;
  for (std::size_t t = 0; t < 8; ++t) {
    for (std::size_t s = 0; s <= t; ++s) m.scores(t, s) = (t - s) % 2 == 0 ? std::pow(0.5, t - s) : 0.0;
  }
  const DecayFit fit = fit_decay_rate(m);
  EXPECT_EQ(fit.excluded_zeros, 4u);
  EXPECT_EQ(fit.lags_used, 4u);
  EXPECT_NEAR(fit.kappa_hat, std::log(2.0), 1e-12);
  EXPECT_TRUE(std::isinf(fit.log_envelope[1]));
}

TEST(DecayFit, AllZeroIsUndefinedAndFewLagsRejected) {
  InfluenceMatrix m;
  m.scores = Matrix(6, 6);
  m.a_max = 0.9;
  EXPECT_FALSE(fit_decay_rate(m).defined);
  m.scores(5, 5) = 1.0;
  m.scores(5, 4) = 0.5;
  EXPECT_THROW(fit_decay_rate(m), ValidationError);
  EXPECT_THROW(fit_decay_rate(m, {4, 2}), ValidationError);
}

TEST(Smoothness, HandValues) {
  EXPECT_NEAR(smoothness(Matrix(2, 1, std::vector<double>{1.0, -1.0})).epsilon, 2.0, 1e-15);
  const Smoothness same = smoothness(Matrix(5, 3, 0.7));
  ASSERT_TRUE(same.defined);
  EXPECT_EQ(same.epsilon, 0.0);
  EXPECT_FALSE(smoothness(Matrix(4, 2, 0.0)).defined);
  EXPECT_FALSE(smoothness(Matrix(1, 2, 1.0)).defined);
}

TEST(Smoothness, PermutationInvariant) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = testing::random_sequence(rng, 12, 3);
    std::vector<std::size_t> order(12);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Matrix y(12, 3);
    for (std::size_t i = 0; i < 12; ++i) std::copy(x.row(order[i]).begin(), x.row(order[i]).end(), y.row(i).begin());
    EXPECT_NEAR(smoothness(x).epsilon, smoothness(y).epsilon, 1e-12);
  }
}

TEST(Oversmoothing, HandInstance) {
  const auto c = testing::constant_coeffs(2, Complex(0.5, 0.0), 0.5, {1.0, -1.0}, 1.0);
  const BoundReport r = oversmoothing_check(c);
  EXPECT_TRUE(r.condition_equal);
  EXPECT_TRUE(r.condition_bounded);
  EXPECT_DOUBLE_EQ(r.lhs, 0.75);
  EXPECT_DOUBLE_EQ(r.rhs, 1.0);
  EXPECT_TRUE(r.verdict);
  EXPECT_TRUE(r.satisfied);
}

TEST(Oversmoothing, ConvexUpdatesFromZeroStateCanExceedTheBound) {
  // a + delta == 1 but b never changes sign: the state ramps up from h_0 = 0
  // while every pairwise b gap is zero.
  StepCoefficients c;
  c.push_back(Step{{Complex(0.9, 0.0)}, {1.0}, {1.0}, 0.1});
  c.push_back(Step{{Complex(0.1, 0.0)}, {1.0}, {1.0}, 0.9});
  const BoundReport r = oversmoothing_check(c);
  EXPECT_TRUE(r.condition_equal);
  EXPECT_FALSE(r.condition_bounded);
  EXPECT_NEAR(r.lhs, 0.81, 1e-15);
  EXPECT_EQ(r.rhs, 0.0);
  EXPECT_TRUE(r.verdict);
  EXPECT_FALSE(r.satisfied);
}

TEST(Oversmoothing, NoVerdictWithoutACondition) {
  const auto c = testing::constant_coeffs(3, Complex(0.9, 0.0), 0.5, {1.0, 2.0, 3.0}, 1.0);
  const BoundReport r = oversmoothing_check(c);
  EXPECT_FALSE(r.verdict);
  EXPECT_FALSE(r.satisfied);
  std::mt19937_64 rng(3);
  EXPECT_FALSE(oversmoothing_check(testing::random_coeffs(rng, 5, 2, testing::GateKind::complex)).verdict);
}

TEST(Oversmoothing, SignStraddlingSweepNeverViolates) {
  std::mt19937_64 rng(44);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t T = testing::uniform_size(rng, 2, 64);
    const std::size_t N = testing::uniform_size(rng, 1, 8);
    StepCoefficients c;
    for (std::size_t t = 0; t < T; ++t) {
      Step s;
      s.delta = testing::uniform(rng, 0.0, 1.0);
      for (std::size_t n = 0; n < N; ++n) {
        s.a.emplace_back(testing::uniform(rng, 0.0, 1.0 - s.delta), 0.0);
        s.b.push_back(testing::uniform(rng, -1.0, 1.0));
        s.c.push_back(1.0);
      }
      c.push_back(std::move(s));
    }
    const BoundReport r = oversmoothing_check(c);
    if (!r.verdict) continue;
    ++checked;
    EXPECT_TRUE(r.satisfied) << "instance " << i << " lhs " << r.lhs << " rhs " << r.rhs;
  }
  EXPECT_GT(checked, 900);
}

TEST(Layerwise, ConstantInputGivesUniformEncodedTokens) {
  const auto stack = random_smoothing_stack(1, 4, 3, 2);
  const auto rep = layerwise_smoothness(stack, Matrix(16, 3, 0.4));
  ASSERT_EQ(rep.size(), 1u);
  ASSERT_TRUE(rep[0].encoded.defined);
  EXPECT_EQ(rep[0].encoded.epsilon, 0.0);
  // The states still ramp up from h_0 = 0.
  EXPECT_GT(rep[0].states.epsilon, 0.0);
}

TEST(Layerwise, RwkvStackSatisfiesConvexCondition) {
  const auto stack = random_smoothing_stack(8, 4, 6, 3);
  std::mt19937_64 rng(3);
  const auto rep = layerwise_smoothness(stack, testing::random_sequence(rng, 64, 6));
  ASSERT_EQ(rep.size(), 8u);
  for (const auto& l : rep) {
    EXPECT_EQ(l.bounds.size(), 6u);
    for (const auto& b : l.bounds) EXPECT_TRUE(b.condition_equal) << "layer " << l.layer;
    EXPECT_TRUE(l.block.defined);
  }
  std::ostringstream csv;
  write_smoothness_csv(csv, rep);
  std::string header;
  std::getline(std::istringstream(csv.str()) >> std::ws, header);
  EXPECT_EQ(header, "layer,probe,epsilon");
}

TEST(Spectrum, SinglePole) {
  const std::vector<Complex> rates{Complex(-1.0, 0.0)};
  const std::vector<double> one{1.0};
  const auto grid = log_grid();
  ASSERT_EQ(grid.size(), 256u);
  EXPECT_EQ(grid.front(), 1e-2);
  EXPECT_EQ(grid.back(), 1e4);
  const std::vector<double> eps{0.01};
  const auto r = frequency_response(rates, one, one, grid, eps);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    EXPECT_NEAR(r.magnitude[i], 1.0 / std::sqrt(1.0 + grid[i] * grid[i]), 1e-12);
  }
  EXPECT_DOUBLE_EQ(std::abs(transfer(rates, one, one, 0.0)), 1.0);
  EXPECT_NEAR(std::abs(transfer(rates, one, one, std::sqrt(3.0))), 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(r.cutoffs[0], 101.0);
  EXPECT_TRUE(r.below_eps[0]);
  EXPECT_TRUE(r.decay_bound_holds);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (grid[i - 1] >= r.a_max) {
      EXPECT_LE(r.magnitude[i], r.magnitude[i - 1]);
    }
  }
}

TEST(Spectrum, RandomComplexModesStayBelowEpsilonAtCutoff) {
  std::mt19937_64 rng(17);
  const auto grid = log_grid();
  const std::vector<double> eps{0.1, 0.01};
  for (int i = 0; i < 50; ++i) {
    std::vector<Complex> rates;
    std::vector<double> b, c;
    for (int n = 0; n < 8; ++n) {
      rates.emplace_back(-testing::uniform(rng, 0.01, 5.0), testing::uniform(rng, -10.0, 10.0));
      b.push_back(testing::uniform(rng, -1.0, 1.0));
      c.push_back(testing::uniform(rng, -1.0, 1.0));
    }
    const auto r = frequency_response(rates, b, c, grid, eps);
    for (std::size_t k = 0; k < eps.size(); ++k) {
      EXPECT_LE(r.at_cutoff[k], eps[k]);
      EXPECT_TRUE(r.below_eps[k]);
    }
    EXPECT_TRUE(r.decay_bound_holds);
  }
}

TEST(Spectrum, RejectsNonDecayingRates) {
  const std::vector<double> one{1.0};
  const std::vector<Complex> flat{Complex(0.0, 1.0)};
  EXPECT_THROW(frequency_response(flat, one, one, log_grid(), {}), ValidationError);
  auto p = std::get<S4Params>(init_params(Variant::s4, 4, 2, 1, {true, false}));
  EXPECT_THROW(frequency_response(p, 0, log_grid(), {}), ValidationError);
  p = std::get<S4Params>(init_params(Variant::s4, 4, 2, 1));
  EXPECT_NO_THROW(frequency_response(p, 1, log_grid(), {}));
}

TEST(GateGap, TimeInvariantGatesHaveNoSpread) {
  std::mt19937_64 rng(4);
  const std::vector<Matrix> inputs{testing::random_sequence(rng, 20, 3), testing::random_sequence(rng, 9, 3)};
  const auto s4 = gate_gap_histogram(init_params(Variant::s4, 4, 3, 1), inputs);
  for (double g : s4.gaps) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(s4.cumulative.front(), 1.0);
  EXPECT_EQ(s4.edges.size(), 11u);
  const auto la = gate_gap_histogram(init_params(Variant::la, 4, 3, 1), inputs);
  for (double g : la.gaps) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(la.share_below_half, 1.0);
}

TEST(GateGap, MambaMatchesBruteForceScan) {
  const auto params = init_params(Variant::mamba, 5, 3, 12);
  const auto& p = std::get<MambaParams>(params);
  std::mt19937_64 rng(12);
  std::vector<Matrix> inputs;
  for (int i = 0; i < 4; ++i) inputs.push_back(testing::random_sequence(rng, 30, 3, 3.0));
  const auto h = gate_gap_histogram(params, inputs);

  std::vector<double> expected;
  for (std::size_t d = 0; d < 3; ++d) {
    for (std::size_t n = 0; n < 5; ++n) {
      double lo = 2.0, hi = -1.0;
      for (const Matrix& x : inputs) {
        for (std::size_t t = 0; t < x.rows(); ++t) {
          double z = 0.0;
          for (std::size_t k = 0; k < 3; ++k) z += p.w_delta(d, k) * x(t, k);
          const double a = std::exp(softplus(z + p.delta_bias(d, 0)) * p.a_diag(d, n));
          lo = std::min(lo, a);
          hi = std::max(hi, a);
        }
      }
      expected.push_back(hi - lo);
    }
  }
  ASSERT_EQ(h.gaps.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(h.gaps[i], expected[i]);
  for (std::size_t k = 0; k < h.edges.size(); ++k) {
    const double share =
        static_cast<double>(std::count_if(expected.begin(), expected.end(), [&](double g) { return g <= k / 10.0; })) /
        static_cast<double>(expected.size());
    EXPECT_EQ(h.cumulative[k], share);
  }
}

TEST(Reports, CsvHeadersAndJsonFields) {
  const auto p = scalar_s4(std::log(0.5), 1.0, 1.0, 1.0);
  const auto m = influence_matrix(p, Matrix(5, 1, 1.0));
  const auto fit = fit_decay_rate(m);
  std::ostringstream influence, decay, bound, spectrum, hist;
  write_influence_csv(influence, m);
  write_decay_csv(decay, fit);
  const std::vector<BoundReport> reports{oversmoothing_check(testing::constant_coeffs(2, Complex(0.5, 0.0), 0.5, {1.0, -1.0}, 1.0))};
  write_bound_csv(bound, reports);
  const std::vector<Complex> rates{Complex(-1.0, 0.0)};
  const std::vector<double> one{1.0};
  write_spectrum_csv(spectrum, frequency_response(rates, one, one, log_grid(), {}));
  std::mt19937_64 rng(1);
  const std::vector<Matrix> inputs{testing::random_sequence(rng, 4, 1)};
  write_histogram_csv(hist, gate_gap_histogram(p, inputs));

  EXPECT_EQ(influence.str().substr(0, influence.str().find('\n')), "t,s,lag,score");
  const std::string rows = influence.str();
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 1 + 15);
  EXPECT_EQ(decay.str().substr(0, decay.str().find('\n')), "lag,log_env");
  EXPECT_EQ(bound.str(), "instance,lhs,rhs,satisfied\n0,0.75,1,1\n");
  EXPECT_EQ(spectrum.str().substr(0, spectrum.str().find('\n')), "omega,magnitude");
  EXPECT_EQ(hist.str().substr(0, hist.str().find('\n')), "bin_edge,cumulative");

  const auto j = to_json(m, fit);
  EXPECT_EQ(j["variant"], "s4");
  EXPECT_TRUE(j["fit"]["defined"].get<bool>());
  EXPECT_EQ(to_json(reports[0])["satisfied"], true);
}

tasks::ARDataset probe_set(std::size_t pairs, std::size_t n) {
  tasks::ARConfig cfg;
  cfg.eval_length = 64;
  cfg.eval_kv_pairs = {pairs};
  cfg.eval_examples = n;
  cfg.seed = 4;
  return tasks::generate_ar_eval_sets(cfg)[0];
}

tasks::TinyModel probe_model() {
  tasks::ModelConfig mc;
  mc.width = 8;
  mc.state_dim = 4;
  mc.seed = 2;
  return tasks::init_model(mc);
}

TEST(Perturbation, RegionsOnlyTouchFiller) {
  const tasks::ARDataset data = probe_set(4, 20);
  for (const auto& ex : data.examples) {
    for (std::size_t q = 0; q < ex.length(); ++q) {
      if (!ex.mask[q]) continue;
      std::size_t filler = 0;
      for (std::size_t t = 2 * ex.kv_pairs; t < q; ++t) filler += ex.mask[t] ? 0 : 1;
      if (filler <= 3) {
        EXPECT_THROW(corruption_positions(ex, q, Region::leading, 3), ValidationError);
        continue;
      }
      const auto lead = corruption_positions(ex, q, Region::leading, 3);
      const auto trail = corruption_positions(ex, q, Region::trailing, 3);
      ASSERT_EQ(lead.size(), 3u);
      ASSERT_EQ(trail.size(), 3u);
      for (std::size_t p : lead) {
        EXPECT_GE(p, 2 * ex.kv_pairs);
        EXPECT_LT(p, q);
        EXPECT_EQ(ex.mask[p], 0);
      }
      for (std::size_t p : trail) {
        EXPECT_LT(p, q);
        EXPECT_EQ(ex.mask[p], 0);
      }
      EXPECT_LE(lead.front(), trail.front());
      EXPECT_LE(lead.back(), trail.back());
    }
  }
}

TEST(Perturbation, ZeroLengthRegionChangesNothing) {
  const tasks::TinyModel model = probe_model();
  const tasks::ARDataset data = probe_set(8, 10);
  for (Region r : {Region::leading, Region::trailing}) {
    const PerturbationReport rep = perturbation_probe(model, data, r, 0, 1);
    EXPECT_EQ(rep.drop, 0.0);
    EXPECT_EQ(rep.clean_accuracy, rep.corrupted_accuracy);
    EXPECT_EQ(rep.evaluated + rep.skipped, data.masked_positions());
    EXPECT_GT(rep.evaluated, 0u);
  }
}

TEST(Perturbation, SameSeedSameResult) {
  const tasks::TinyModel model = probe_model();
  const tasks::ARDataset data = probe_set(8, 10);
  const auto a = perturbation_probe(model, data, Region::trailing, 4, 7);
  const auto b = perturbation_probe(model, data, Region::trailing, 4, 7, 3);
  EXPECT_EQ(a.corrupted_accuracy, b.corrupted_accuracy);
  EXPECT_EQ(a.evaluated, b.evaluated);
  EXPECT_EQ(a.skipped, b.skipped);
  EXPECT_EQ(a.evaluated + a.skipped, data.masked_positions());
}

TEST(Perturbation, RejectsRegionsLongerThanAnyStretch) {
  const tasks::TinyModel model = probe_model();
  const tasks::ARDataset data = probe_set(8, 5);
  EXPECT_THROW(perturbation_probe(model, data, Region::leading, 64), ValidationError);
  EXPECT_THROW(parse_region("middle"), ValidationError);
  EXPECT_EQ(parse_region("leading"), Region::leading);
  std::ostringstream csv;
  write_probe_csv(csv, {perturbation_probe(model, data, Region::leading, 2)});
  EXPECT_EQ(csv.str().substr(0, 48), "region,k,clean,corrupted,drop,evaluated,skipped\n");
}

}  // namespace
}  // namespace ssm::analysis
