#include <gtest/gtest.h>

#include <filesystem>

#include "ssm/checks/checks.hpp"

namespace ssm::checks {
namespace {

TEST(Checks, SmallSuitesPassAndReportTheirId) {
  EXPECT_EQ(parallel_form(40, 5).id, 1);
  EXPECT_TRUE(parallel_form(40, 5).pass);
  EXPECT_TRUE(gradients(14).pass);
  EXPECT_TRUE(oversmoothing(50, 5).pass);
  EXPECT_TRUE(low_pass(10, 5).pass);
  EXPECT_TRUE(polarization(10, 10, 5).pass);
  EXPECT_TRUE(gate_gap(5).pass);
}

TEST(Checks, OversmoothingDetailsCountBothConditions) {
  const CheckResult r = oversmoothing(30, 2);
  EXPECT_EQ(r.details.at("instances_per_condition"), 30);
  EXPECT_EQ(r.details.at("condition_equal").at("missing_verdict"), 0);
  EXPECT_EQ(r.details.at("condition_bounded").at("missing_verdict"), 0);
  EXPECT_TRUE(r.details.at("hand").at("pass").get<bool>());
}

TEST(Checks, SmoothnessReportsOneEpsilonPerLayer) {
  const CheckResult r = smoothness_dynamics(5, 1);
  EXPECT_EQ(r.details.at("mean_block_epsilon").size(), 8u);
  EXPECT_EQ(r.details.at("bound_violations"), 0);
}

TEST(Checks, ExperimentJsonRoundTrip) {
  ARExperiment e = default_ar_experiment();
  e.width = 12;
  e.seeds = {4, 5};
  e.train.learning_rate = 0.25;
  e.data.eval_kv_pairs = {2, 3};
  const ARExperiment back = ar_experiment_from_json(to_json(e));
  EXPECT_EQ(to_json(back), to_json(e));
}

ARExperiment tiny_experiment(const std::string& cache) {
  ARExperiment e;
  e.data.vocab_size = 16;
  e.data.lengths = {16, 24};
  e.data.kv_fractions = {0.25, 0.5};
  e.data.examples_per_cell = 8;
  e.data.eval_length = 32;
  e.data.eval_kv_pairs = {2, 4};
  e.data.eval_examples = 10;
  e.train.epochs = 1;
  e.train.batch_size = 8;
  e.width = 6;
  e.state_dim = 3;
  e.cache_dir = cache;
  e.probe_k = 2;
  return e;
}

TEST(Checks, ARRunIsReusedFromCacheOnlyWhenConfigMatches) {
  const auto dir = std::filesystem::temp_directory_path() / "ssm_checks_cache_test";
  std::filesystem::remove_all(dir);
  ARExperiment e = tiny_experiment(dir.string());
  const ARVariant v = ar_variants().front();
  const ARRun first = run_ar(e, v, 1);
  EXPECT_FALSE(first.cached);
  const ARRun second = run_ar(e, v, 1);
  EXPECT_TRUE(second.cached);
  EXPECT_EQ(second.eval.mean_accuracy, first.eval.mean_accuracy);
  EXPECT_EQ(second.history.size(), first.history.size());
  e.train.learning_rate *= 2;
  EXPECT_FALSE(run_ar(e, v, 1).cached);
  std::filesystem::remove_all(dir);
}

TEST(Checks, ARCriteriaProduceOneRowPerSeed) {
  ARExperiment e = tiny_experiment("");
  e.seeds = {1, 2};
  const CheckResult order = ar_ordering(e);
  EXPECT_EQ(order.details.at("runs").size(), 6u);
  EXPECT_FALSE(order.pass);  // fewer than three seeds never passes
  const CheckResult probe = perturbation_direction(e);
  EXPECT_EQ(probe.details.at("seeds").size(), 2u);
  EXPECT_FALSE(probe.pass);
}

TEST(Checks, VariantsMatchTheComparisonRows) {
  const auto v = ar_variants();
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[0].layers, 2u);
  EXPECT_EQ(v[0].polarization.extra_channels(), 0u);
  EXPECT_TRUE(v[1].polarization.one_channel);
  EXPECT_FALSE(v[1].polarization.zero_channel);
  EXPECT_EQ(v[2].layers, 4u);
  EXPECT_EQ(v[2].polarization.extra_channels(), 2u);
}

}  // namespace
}  // namespace ssm::checks
