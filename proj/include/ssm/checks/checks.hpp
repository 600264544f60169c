#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssm/tasks/ar.hpp"
#include "ssm/tasks/model.hpp"
#include "ssm/tasks/train.hpp"

// Property suites over fixed random populations. Each returns one verdict
// with the measured quantity and the threshold it was held to.

namespace ssm::checks {

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string summary;
  nlohmann::json details = nlohmann::json::object();
  double seconds = 0.0;
};

/// Recurrent vs. closed-form states over every variant, T <= 128, N <= 32.
/// Tolerances 1e-10 (real gates) and 1e-8 (complex S4).
CheckResult parallel_form(std::size_t instances = 1000, std::uint64_t seed = 1);

/// Analytic vs. central-difference gradients of the single layer for seeds
/// 1..count, variants cycling, T <= 64, N <= 8, D <= 4. Tolerance 1e-5.
CheckResult gradients(std::size_t count = 200);

/// Constant-gate scalar S4 influence against its closed form (1e-12) and an
/// exact decay fit; Mamba at init (T = 256) decays at least as fast as
/// log(a_max) + 0.05 per lag; linear attention fits |kappa| <= 0.01.
CheckResult recency(std::uint64_t seed = 1);

/// The smoothing bound on `instances` random instances with a + delta = 1
/// and as many with a + delta <= 1 and every b entry straddling zero, T <= 64,
/// plus the pinned hand instance.
CheckResult oversmoothing(std::size_t instances = 1000, std::uint64_t seed = 1);

/// Single pole against 1/sqrt(1 + w^2) (1e-12) and |Z(cutoff(eps))| <= eps
/// for random complex-mode S4 channels, eps in {0.1, 0.01}.
CheckResult low_pass(std::size_t instances = 100, std::uint64_t seed = 1);

/// Delta gradient of a both-polarized Mamba equals the free-channel terms
/// (1e-10) on random instances, and polarized rates stay bitwise fixed
/// through `steps` optimizer steps.
CheckResult polarization(std::size_t instances = 100, std::size_t steps = 100, std::uint64_t seed = 1);

/// Per-layer bound on a random 8-layer residual stack with a + delta = 1 and
/// the share of inputs whose last-block epsilon is at most the first-block one
/// (needs >= 0.9).
CheckResult smoothness_dynamics(std::size_t inputs = 100, std::uint64_t seed = 1);

/// Gate-gap histogram against a brute-force per-entry max/min scan (exact);
/// the share of gaps below 0.5 is reported only.
CheckResult gate_gap(std::uint64_t seed = 1);

/// One row of the associative-recall comparison.
struct ARVariant {
  std::string label;
  std::size_t layers = 2;
  PolarizationConfig polarization;
};

/// default-2L, one-polarized-2L, both-polarized-4L (all Mamba).
std::vector<ARVariant> ar_variants();

struct ARExperiment {
  tasks::ARConfig data;
  tasks::TrainConfig train;
  std::size_t width = 64;
  std::size_t state_dim = 16;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string cache_dir;  // checkpoints and eval reports are reused from here when the config matches
  std::size_t probe_k = 8;
  std::size_t threads = 1;
  bool verbose = false;
};

ARExperiment default_ar_experiment();
nlohmann::json to_json(const ARExperiment& e);
ARExperiment ar_experiment_from_json(const nlohmann::json& j);

struct ARRun {
  std::string label;
  std::uint64_t seed = 0;
  tasks::EvalReport eval;
  std::vector<tasks::EpochRecord> history;
  double seconds = 0.0;
  bool cached = false;
  std::string checkpoint;  // empty without a cache dir
  tasks::TinyModel model;
};

/// Trains (or reloads) one model for `variant` and `seed`.
ARRun run_ar(const ARExperiment& e, const ARVariant& variant, std::uint64_t seed);

/// Mean avg accuracy ordering both-polarized-4L > one-polarized-2L >
/// default-2L over the seeds, and a >= 5 point lead of both-polarized-4L over
/// default-2L on the 32-pair split.
CheckResult ar_ordering(const ARExperiment& e);

/// Trailing-region corruption drops accuracy more than leading-region
/// corruption for the default-2L model of every seed.
CheckResult perturbation_direction(const ARExperiment& e);

}  // namespace ssm::checks
