#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssm/core/matrix.hpp"
#include "ssm/tasks/ar.hpp"
#include "ssm/tasks/model.hpp"

namespace ssm::tasks {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 0.0;  // global gradient norm cap; 0 disables
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t chunk = 8;  // examples per partial gradient sum
};

void validate_train_config(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Raised when a batch loss or gradient stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, std::size_t step, const std::string& what);
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Mean masked cross-entropy over the selected examples and its gradient,
/// one matrix per entry of parameters(). Per-example gradients are summed in
/// chunks of `chunk` examples and the chunks are added in order, so the
/// result does not depend on `threads`.
struct BatchGradient {
  double loss = 0.0;
  std::size_t masked = 0;
  std::size_t correct = 0;  // argmax hits at masked positions
  std::vector<Matrix> grads;
};

BatchGradient batch_gradient(const TinyModel& model, const ARDataset& data, std::span<const std::size_t> indices,
                             std::size_t threads = 1, std::size_t chunk = 8);

/// Adam over the unconstrained coordinates of each tensor: negative_exp
/// tensors are -exp(theta), positive_exp exp(theta), unit_sigmoid
/// sigmoid(theta). Entries whose step is zero keep their stored value
/// bit for bit.
class AdamOptimizer {
 public:
  AdamOptimizer(TinyModel& model, const TrainConfig& cfg);
  /// Applies one update from gradients with respect to the stored values.
  /// Returns the global gradient norm before clipping.
  double step(const std::vector<Matrix>& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<ParamRef> params_;
  std::vector<std::vector<double>> theta_, m_, v_;
  TrainConfig cfg_;
  std::size_t t_ = 0;
};

struct SplitMetrics {
  std::string split;
  std::size_t kv_pairs = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t masked = 0;
  std::size_t correct = 0;
};

/// Accuracy of argmax predictions (lowest id on ties) at masked positions,
/// and the mean masked cross-entropy.
SplitMetrics evaluate_ar(const TinyModel& model, const ARDataset& data, std::size_t threads = 1);

struct EvalReport {
  std::vector<SplitMetrics> splits;
  double mean_accuracy = 0.0;
};

/// Splits are named kv<pairs> from each set's first example.
EvalReport evaluate_ar_sets(const TinyModel& model, std::span<const ARDataset> sets, std::size_t threads = 1);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
  EvalReport final_eval;
};

/// Called after every epoch with the records of that epoch.
using EpochCallback = std::function<void(const std::vector<EpochRecord>&)>;

/// Shuffles with seed + epoch, takes full and trailing partial batches in
/// order, and after every epoch records the train loss and accuracy of the
/// epoch's batches plus each evaluation split.
TrainResult train_ar(TinyModel& model, const ARDataset& train, std::span<const ARDataset> eval_sets,
                     const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// "epoch,split,loss,accuracy"
void write_metrics_csv(std::ostream& out, const std::vector<EpochRecord>& history);

nlohmann::json to_json(const SplitMetrics& m);
nlohmann::json to_json(const EvalReport& r);

}  // namespace ssm::tasks
