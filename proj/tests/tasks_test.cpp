#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ssm/core/serialize.hpp"
#include "ssm/grad/layer.hpp"
#include "ssm/tasks/ar.hpp"
#include "ssm/tasks/model.hpp"
#include "ssm/tasks/train.hpp"

namespace ssm::tasks {
namespace {

ARConfig small_ar_config() {
  ARConfig cfg;
  cfg.lengths = {32, 48};
  cfg.kv_fractions = {0.125, 0.25, 0.5};
  cfg.examples_per_cell = 40;
  cfg.eval_length = 64;
  cfg.eval_kv_pairs = {4, 8};
  cfg.eval_examples = 30;
  cfg.seed = 7;
  return cfg;
}

// Vocabulary 16 holds eight keys.
ARConfig tiny_ar_config(std::size_t per_cell) {
  ARConfig cfg;
  cfg.vocab_size = 16;
  cfg.lengths = {16, 24};
  cfg.kv_fractions = {0.25, 0.5};
  cfg.examples_per_cell = per_cell;
  cfg.eval_length = 32;
  cfg.eval_kv_pairs = {4};
  cfg.eval_examples = 10;
  cfg.seed = 9;
  return cfg;
}

ModelConfig small_model(Variant mixer = Variant::mamba, bool polarized = false) {
  ModelConfig cfg;
  cfg.vocab_size = 16;
  cfg.width = 6;
  cfg.state_dim = 4;
  cfg.layers = 2;
  cfg.mixer = mixer;
  cfg.polarization = {polarized, polarized};
  cfg.seed = 3;
  return cfg;
}

// Re-derives every masked target from the kv section of the raw tokens.
void reparse(const ARExample& ex, std::uint32_t vocab) {
  const std::size_t m = ex.kv_pairs;
  std::map<TokenId, TokenId> bound;
  for (std::size_t i = 0; i < m; ++i) {
    const TokenId k = ex.input[2 * i], v = ex.input[2 * i + 1];
    ASSERT_GE(k, 1u);
    ASSERT_LE(k, vocab / 2);
    ASSERT_GT(v, vocab / 2);
    ASSERT_LT(v, vocab);
    ASSERT_TRUE(bound.emplace(k, v).second) << "duplicate key";
  }
  std::set<TokenId> asked;
  for (std::size_t t = 2 * m; t < ex.length(); ++t) {
    if (!ex.mask[t]) {
      EXPECT_EQ(ex.input[t], pad_token) << "non-query slot in the query section";
      continue;
    }
    EXPECT_EQ((t - 2 * m) % 2, 0u) << "query at an odd offset";
    const auto it = bound.find(ex.input[t]);
    ASSERT_NE(it, bound.end()) << "query token is not a key";
    EXPECT_EQ(ex.target[t], it->second);
    EXPECT_TRUE(asked.insert(ex.input[t]).second);
  }
  for (std::size_t t = 0; t < 2 * m; ++t) EXPECT_EQ(ex.mask[t], 0);
  EXPECT_EQ(asked.size(), m);
}

TEST(ARData, SinglePairShortSequence) {
  std::mt19937_64 rng(1);
  const ARExample ex = generate_ar_example(rng, 8, 1, 64, 1.0);
  ASSERT_EQ(ex.length(), 8u);
  EXPECT_EQ(ex.masked(), 1u);
  for (std::size_t t = 0; t < 8; ++t) {
    if (ex.mask[t]) {
      EXPECT_EQ(ex.input[t], ex.input[0]);
      EXPECT_EQ(ex.target[t], ex.input[1]);
    }
  }
}

TEST(ARData, EveryTargetRederivedFromKvSection) {
  const ARConfig cfg = small_ar_config();
  const ARDataset train = generate_ar_dataset(cfg);
  ASSERT_EQ(train.examples.size(), 6u * cfg.examples_per_cell);
  for (const auto& ex : train.examples) {
    reparse(ex, cfg.vocab_size);
    EXPECT_EQ(check_ar_example(ex, cfg.vocab_size), "");
  }
  for (const auto& set : generate_ar_eval_sets(cfg)) {
    for (const auto& ex : set.examples) {
      EXPECT_EQ(ex.length(), cfg.eval_length);
      reparse(ex, cfg.vocab_size);
    }
  }
  // Cell order and pair counts: floor(f * L / 2).
  EXPECT_EQ(train.examples.front().kv_pairs, 2u);
  EXPECT_EQ(train.examples.back().kv_pairs, 12u);
}

TEST(ARData, CheckerFlagsCorruption) {
  std::mt19937_64 rng(2);
  ARExample ex = generate_ar_example(rng, 32, 4, 16, 1.0);
  ASSERT_EQ(check_ar_example(ex, 16), "");
  for (std::size_t t = 0; t < ex.length(); ++t) {
    if (ex.mask[t]) {
      ex.target[t] = ex.target[t] == 15 ? 14 : 15;
      break;
    }
  }
  EXPECT_NE(check_ar_example(ex, 16), "");
}

TEST(ARData, DeterministicGivenSeed) {
  const ARConfig cfg = small_ar_config();
  const ARDataset a = generate_ar_dataset(cfg), b = generate_ar_dataset(cfg);
  ASSERT_EQ(a.examples.size(), b.examples.size());
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    EXPECT_EQ(a.examples[i].input, b.examples[i].input);
    EXPECT_EQ(a.examples[i].mask, b.examples[i].mask);
  }
  ARConfig other = cfg;
  other.seed = 8;
  EXPECT_NE(generate_ar_dataset(other).examples[0].input, a.examples[0].input);
}

TEST(ARData, QueryPositionsFollowPowerLaw) {
  // One pair at L = 34 leaves 16 query slots; slot j has probability
  // proportional to 1 / (j + 1).
  constexpr std::size_t slots = 16, n = 10000;
  std::mt19937_64 rng(11);
  std::vector<double> counts(slots, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const ARExample ex = generate_ar_example(rng, 2 + 2 * slots, 1, 64, 1.0);
    for (std::size_t t = 2; t < ex.length(); ++t) {
      if (ex.mask[t]) counts[(t - 2) / 2] += 1.0;
    }
  }
  double z = 0.0;
  for (std::size_t j = 0; j < slots; ++j) z += 1.0 / static_cast<double>(j + 1);
  double chi2 = 0.0;
  for (std::size_t j = 0; j < slots; ++j) {
    const double expected = n / (z * static_cast<double>(j + 1));
    chi2 += (counts[j] - expected) * (counts[j] - expected) / expected;
  }
  // 15 degrees of freedom: P(chi2 > 37.7) = 0.001.
  EXPECT_LT(chi2, 37.7);
  // A flat placement would be rejected by the same test.
  double chi2_flat = 0.0;
  for (std::size_t j = 0; j < slots; ++j) {
    const double expected = static_cast<double>(n) / slots;
    chi2_flat += (counts[j] - expected) * (counts[j] - expected) / expected;
  }
  EXPECT_GT(chi2_flat, 37.7);
}

TEST(ARData, RejectsImpossibleConfigs) {
  std::mt19937_64 rng(0);
  EXPECT_THROW(generate_ar_example(rng, 64, 40, 64, 1.0), ValidationError);  // more pairs than keys
  EXPECT_THROW(generate_ar_example(rng, 8, 3, 64, 1.0), ValidationError);    // no room for queries
  EXPECT_THROW(generate_ar_example(rng, 8, 1, 7, 1.0), ValidationError);     // odd vocabulary
  ARConfig cfg;
  cfg.kv_fractions = {0.75};
  EXPECT_THROW(validate_ar_config(cfg), ValidationError);
  cfg = ARConfig{};
  cfg.eval_kv_pairs = {40};
  EXPECT_THROW(validate_ar_config(cfg), ValidationError);
}

TEST(ARData, ContainerAndManifestRoundTrip) {
  const ARConfig cfg = small_ar_config();
  const ARDataset data = generate_ar_dataset(cfg);
  const auto path = std::filesystem::temp_directory_path() / "ssm_tasks_test_dataset.bin";
  const nlohmann::json manifest = save_ar_dataset(path.string(), data, to_json(cfg));
  EXPECT_EQ(manifest.at("examples"), data.examples.size());
  EXPECT_EQ(manifest.at("masked_positions"), data.masked_positions());
  const ARDataset back = load_ar_dataset(path.string(), manifest);
  ASSERT_EQ(back.examples.size(), data.examples.size());
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    EXPECT_EQ(back.examples[i].input, data.examples[i].input);
    EXPECT_EQ(back.examples[i].target, data.examples[i].target);
    EXPECT_EQ(back.examples[i].mask, data.examples[i].mask);
    EXPECT_EQ(back.examples[i].kv_pairs, data.examples[i].kv_pairs);
  }
  nlohmann::json bad = manifest;
  bad["crc32"] = manifest.at("crc32").get<std::uint32_t>() ^ 1u;
  EXPECT_ANY_THROW(load_ar_dataset(path.string(), bad));
  std::filesystem::remove(path);

  EXPECT_EQ(to_json(ar_config_from_json(to_json(cfg))), to_json(cfg));
}

TEST(Model, LogitsAreCausal) {
  const TinyModel model = init_model(small_model());
  std::vector<TokenId> ids{1, 9, 2, 12, 0, 1, 0, 2, 0, 5};
  const Matrix base = forward_model(model, ids);
  for (std::size_t cut = 1; cut < ids.size(); ++cut) {
    std::vector<TokenId> changed = ids;
    for (std::size_t t = cut; t < ids.size(); ++t) changed[t] = (changed[t] + 7) % 16;
    const Matrix other = forward_model(model, changed);
    for (std::size_t t = 0; t < cut; ++t) {
      for (std::size_t v = 0; v < 16; ++v) EXPECT_EQ(base(t, v), other(t, v)) << "cut " << cut << " t " << t;
    }
  }
}

TEST(Model, ZeroClassifierGivesUniformLogits) {
  TinyModel model = init_model(small_model());
  model.classifier = Matrix(16, 6);
  std::vector<TokenId> ids{3, 11, 0, 3};
  const Matrix logits = forward_model(model, ids);
  for (double v : logits.flat()) EXPECT_EQ(v, 0.0);
  const std::vector<TokenId> targets{0, 0, 0, 11};
  const std::vector<std::uint8_t> mask{0, 0, 0, 1};
  EXPECT_NEAR(masked_cross_entropy(logits, targets, mask), std::log(16.0), 1e-15);
  EXPECT_EQ(argmax(logits.row(0)), 0u);
}

TEST(Model, CrossEntropyMaskingContract) {
  Matrix logits(3, 4);
  for (std::size_t t = 0; t < 3; ++t) logits(t, t) = 100.0;
  const std::vector<TokenId> targets{0, 1, 2};
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const double loss = masked_cross_entropy(logits, targets, mask);
  EXPECT_LT(loss, 1e-40);
  logits(1, 3) = 50.0;
  EXPECT_EQ(masked_cross_entropy(logits, targets, mask), loss);
  const std::vector<std::uint8_t> none{0, 0, 0};
  EXPECT_THROW(masked_cross_entropy(logits, targets, none), ValidationError);
}

TEST(Model, ArgmaxTiesGoToLowestId) {
  const std::vector<double> row{1.0, 3.0, 3.0, -2.0};
  EXPECT_EQ(argmax(row), 1u);
}

TEST(Model, RejectsOutOfVocabularyTokens) {
  const TinyModel model = init_model(small_model());
  const std::vector<TokenId> ids{1, 16};
  EXPECT_THROW(forward_model(model, ids), ValidationError);
}

TEST(Model, ParameterListCoversTrainableTensors) {
  TinyModel model = init_model(small_model(Variant::mamba, true));
  const auto params = parameters(model);
  std::set<std::string> names;
  for (const auto& p : params) names.insert(p.name);
  EXPECT_EQ(names.size(), params.size());
  EXPECT_TRUE(names.count("block1.mixer.a_diag"));
  EXPECT_TRUE(names.count("block0.conv_w"));
  std::size_t total = 0;
  for (const auto& p : params) total += p.value->size();
  EXPECT_EQ(total, parameter_count(model));
  // a_diag holds only the free rates; polarized entries are constants.
  EXPECT_EQ(std::get<MambaParams>(model.blocks[0].mixer).a_diag.cols(), 4u);
  EXPECT_EQ(state_dim_of(model.blocks[0].mixer), 6u);
}

TEST(Model, CheckpointRoundTripIsBitwise) {
  for (Variant v : {Variant::mamba, Variant::s4, Variant::rwkv}) {
    const TinyModel model = init_model(small_model(v, v != Variant::rwkv));
    std::stringstream buf;
    write_checkpoint(buf, model);
    const TinyModel back = read_checkpoint(buf);
    EXPECT_EQ(to_json(back.config), to_json(model.config));
    const std::vector<TokenId> ids{1, 9, 0, 1};
    EXPECT_EQ(forward_model(back, ids), forward_model(model, ids));
  }
  std::stringstream junk("SSMBnot a checkpoint");
  EXPECT_THROW(read_checkpoint(junk), io::FormatError);
}

// Central differences of the mean masked loss against batch_gradient.
void check_model_gradient(const ModelConfig& mc, double h, double tol) {
  TinyModel model = init_model(mc);
  std::mt19937_64 rng(mc.seed + 100);
  ARDataset data;
  data.vocab_size = mc.vocab_size;
  data.examples.push_back(generate_ar_example(rng, 12, 2, mc.vocab_size, 1.0));
  data.examples.push_back(generate_ar_example(rng, 10, 1, mc.vocab_size, 1.0));
  const std::vector<std::size_t> idx{0, 1};
  const BatchGradient bg = batch_gradient(model, data, idx);

  auto loss = [&] {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& ex : data.examples) {
      const Matrix logits = forward_model(model, ex.input);
      sum += masked_cross_entropy(logits, ex.target, ex.mask) * static_cast<double>(ex.masked());
      count += ex.masked();
    }
    return sum / static_cast<double>(count);
  };
  EXPECT_NEAR(loss(), bg.loss, 1e-12);

  // Tensor-wise relative error: the largest entry difference over the
  // largest entry. Single entries near 1e-8 sit at the noise floor of the
  // differenced loss and cannot be compared one by one.
  auto params = parameters(model);
  for (std::size_t p = 0; p < params.size(); ++p) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t e = 0; e < params[p].value->size(); ++e) {
      double& slot = params[p].value->flat()[e];
      const double keep = slot;
      const double step = params[p].constraint == Constraint::none ? h : h * std::abs(keep);
      slot = keep + step;
      const double up = loss();
      slot = keep - step;
      const double down = loss();
      slot = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = bg.grads[p].flat()[e];
      diff = std::max(diff, std::abs(analytic - numeric));
      scale = std::max({scale, std::abs(analytic), std::abs(numeric)});
    }
    EXPECT_LT(diff / std::max(scale, 1e-8), tol) << variant_name(mc.mixer) << " " << params[p].name << " scale "
                                                 << scale;
  }
}

TEST(Training, FullModelGradientMatchesFiniteDifferences) {
  check_model_gradient(small_model(Variant::mamba, false), 1e-5, 1e-5);
  check_model_gradient(small_model(Variant::s4, false), 1e-5, 1e-5);
  check_model_gradient(small_model(Variant::rwkv, false), 1e-5, 1e-5);
  ModelConfig no_conv = small_model(Variant::gla, false);
  no_conv.conv = false;
  check_model_gradient(no_conv, 1e-5, 1e-5);
}

TEST(Training, PolarizedModelGradientMatchesFiniteDifferences) {
  check_model_gradient(small_model(Variant::mamba, true), 1e-5, 1e-5);
}

TEST(Training, BatchGradientIndependentOfThreads) {
  const TinyModel model = init_model(small_model());
  const ARDataset data = generate_ar_dataset(tiny_ar_config(12));
  std::vector<std::size_t> idx(37);
  std::iota(idx.begin(), idx.end(), std::size_t{5});
  const BatchGradient one = batch_gradient(model, data, idx, 1, 4);
  const BatchGradient three = batch_gradient(model, data, idx, 3, 4);
  EXPECT_EQ(one.loss, three.loss);
  EXPECT_EQ(one.correct, three.correct);
  ASSERT_EQ(one.grads.size(), three.grads.size());
  for (std::size_t p = 0; p < one.grads.size(); ++p) EXPECT_EQ(one.grads[p], three.grads[p]);
}

TEST(Training, ZeroLearningRateLeavesParametersBitwise) {
  TinyModel model = init_model(small_model(Variant::mamba, true));
  const TinyModel before = model;
  const ARConfig ac = tiny_ar_config(10);
  const ARDataset data = generate_ar_dataset(ac);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 16;
  tc.learning_rate = 0.0;
  train_ar(model, data, {}, tc);
  auto a = parameters(model);
  TinyModel copy = before;
  auto b = parameters(copy);
  for (std::size_t p = 0; p < a.size(); ++p) EXPECT_EQ(*a[p].value, *b[p].value) << a[p].name;
}

TEST(Training, SameSeedSameRun) {
  const ARConfig ac = tiny_ar_config(10);
  const ARDataset data = generate_ar_dataset(ac);
  const auto evals = generate_ar_eval_sets(ac);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 16;
  tc.learning_rate = 1e-2;
  TinyModel m1 = init_model(small_model()), m2 = init_model(small_model());
  const TrainResult r1 = train_ar(m1, data, evals, tc);
  tc.threads = 2;
  const TrainResult r2 = train_ar(m2, data, evals, tc);
  ASSERT_EQ(r1.history.size(), 4u);
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    EXPECT_EQ(r1.history[i].loss, r2.history[i].loss);
    EXPECT_EQ(r1.history[i].accuracy, r2.history[i].accuracy);
  }
  auto a = parameters(m1), b = parameters(m2);
  for (std::size_t p = 0; p < a.size(); ++p) EXPECT_EQ(*a[p].value, *b[p].value);
  EXPECT_NE(r1.history[0].loss, r1.history[2].loss);
  std::ostringstream csv;
  write_metrics_csv(csv, r1.history);
  EXPECT_EQ(csv.str().substr(0, 27), "epoch,split,loss,accuracy\n1");
}

TEST(Training, PolarizedRatesStayFrozen) {
  TinyModel model = init_model(small_model(Variant::mamba, true));
  const Matrix a_before = std::get<MambaParams>(model.blocks[0].mixer).a_diag;
  const ARConfig ac = tiny_ar_config(10);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  tc.learning_rate = 1e-2;
  train_ar(model, generate_ar_dataset(ac), {}, tc);
  for (const Block& b : model.blocks) {
    const auto& m = std::get<MambaParams>(b.mixer);
    for (std::size_t d = 0; d < m.channels(); ++d) {
      const std::vector<double> a = m.effective_a(d);
      EXPECT_EQ(a.front(), 0.0);
      EXPECT_EQ(a.back(), zero_channel_rate);
      for (std::size_t n = 1; n + 1 < a.size(); ++n) EXPECT_LT(a[n], 0.0);
    }
  }
  EXPECT_NE(std::get<MambaParams>(model.blocks[0].mixer).a_diag, a_before);
}

TEST(Training, OptimizerKeepsConstrainedTensorsValid) {
  ModelConfig mc = small_model(Variant::retnet, false);
  TinyModel model = init_model(mc);
  const ARConfig ac = tiny_ar_config(10);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.learning_rate = 0.5;
  train_ar(model, generate_ar_dataset(ac), {}, tc);
  EXPECT_NO_THROW(validate_model(model));
}

TEST(Training, RejectsBadConfigs) {
  TrainConfig tc;
  tc.batch_size = 0;
  EXPECT_THROW(validate_train_config(tc), ValidationError);
  tc = TrainConfig{};
  tc.beta2 = 1.0;
  EXPECT_THROW(validate_train_config(tc), ValidationError);
  tc = TrainConfig{};
  tc.learning_rate = -1.0;
  EXPECT_THROW(validate_train_config(tc), ValidationError);
  EXPECT_EQ(to_json(train_config_from_json(to_json(TrainConfig{}))), to_json(TrainConfig{}));
}

TEST(Training, DivergenceReportsEpoch) {
  TinyModel model = init_model(small_model());
  for (double& w : model.classifier.flat()) w = 1e308;
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  try {
    train_ar(model, generate_ar_dataset(tiny_ar_config(4)), {}, tc);
    ADD_FAILURE() << "training on overflowing logits did not abort";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1u);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Evaluation, UntrainedModelIsNearChance) {
  // Targets are drawn from the V/2 - 1 value tokens, so an untrained model
  // cannot beat 1 / 31 by more than sampling noise.
  ARConfig ac;
  ac.eval_examples = 100;
  ac.eval_kv_pairs = {8};
  const auto sets = generate_ar_eval_sets(ac);
  ModelConfig mc;
  mc.width = 16;
  mc.state_dim = 4;
  const TinyModel model = init_model(mc);
  const SplitMetrics m = evaluate_ar(model, sets[0]);
  EXPECT_EQ(m.masked, 800u);
  const double p = 1.0 / 31.0;
  EXPECT_LT(m.accuracy, p + 4.0 * std::sqrt(p * (1 - p) / 800.0));
  EXPECT_NEAR(m.loss, std::log(64.0), 1.5);
}

TEST(Evaluation, ReportAveragesSplits) {
  ARConfig ac;
  ac.eval_examples = 20;
  const auto sets = generate_ar_eval_sets(ac);
  ModelConfig mc;
  mc.width = 8;
  mc.state_dim = 3;
  const TinyModel model = init_model(mc);
  const EvalReport r = evaluate_ar_sets(model, sets);
  ASSERT_EQ(r.splits.size(), 3u);
  EXPECT_EQ(r.splits[0].split, "kv8");
  EXPECT_EQ(r.splits[2].split, "kv32");
  EXPECT_DOUBLE_EQ(r.mean_accuracy, (r.splits[0].accuracy + r.splits[1].accuracy + r.splits[2].accuracy) / 3.0);
}

TEST(Training, LearnsSinglePairRecall) {
  ARConfig ac;
  ac.lengths = {16};
  ac.kv_fractions = {0.125};  // one pair
  ac.examples_per_cell = 500;
  ac.eval_length = 16;
  ac.eval_kv_pairs = {1};
  ac.eval_examples = 200;
  ac.seed = 5;
  const ARDataset train = generate_ar_dataset(ac);
  const auto evals = generate_ar_eval_sets(ac);
  ModelConfig mc;
  mc.state_dim = 8;
  mc.seed = 5;
  TinyModel model = init_model(mc);
  // 500 examples give only four steps per epoch at batch 128, so this run
  // takes smaller clipped batches at a larger step.
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 16;
  tc.learning_rate = 3e-3;
  tc.clip_norm = 1.0;
  const TrainResult r = train_ar(model, train, evals, tc);
  EXPECT_EQ(r.history.size(), 40u);
  // Held-out pairs: the training set alone can be memorized.
  EXPECT_GT(r.final_eval.mean_accuracy, 0.9);
}

}  // namespace
}  // namespace ssm::tasks
