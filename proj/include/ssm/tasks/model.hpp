#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssm/core/matrix.hpp"
#include "ssm/grad/tape.hpp"
#include "ssm/params/params.hpp"
#include "ssm/tasks/ar.hpp"

namespace ssm::tasks {

struct ModelConfig {
  std::uint32_t vocab_size = 64;
  std::size_t width = 64;      // D
  std::size_t state_dim = 16;  // free state entries per channel; polarized ones come on top
  std::size_t layers = 2;
  Variant mixer = Variant::mamba;
  PolarizationConfig polarization;
  bool conv = true;
  std::size_t conv_kernel = 4;
  std::uint64_t seed = 0;
};

/// Pre-norm residual block:
///   u = rmsnorm(x); v = silu(conv(u)); m = ssm(v);
///   x' = x + W_o (m * sigmoid(W_g u + b_g))
struct Block {
  Matrix norm_gain;  // D x 1
  Matrix conv_w;     // D x K
  Matrix conv_b;     // D x 1
  LayerParams mixer;
  Matrix gate_w;  // D x D
  Matrix gate_b;  // D x 1
  Matrix out_w;   // D x D
};

/// Token embedding, a stack of blocks, final rmsnorm and a D -> vocab
/// classifier. Causal end to end.
struct TinyModel {
  ModelConfig config;
  Matrix embedding;  // V x D
  std::vector<Block> blocks;
  Matrix final_gain;  // D x 1
  Matrix classifier;  // V x D
};

/// How the optimizer sees a tensor: values are f(theta) for an unconstrained
/// theta, which keeps a tensor inside the set its parameterization accepts.
enum class Constraint : std::uint8_t { none, negative_exp, positive_exp, unit_sigmoid };

struct ParamRef {
  std::string name;
  Matrix* value = nullptr;
  Constraint constraint = Constraint::none;
};

TinyModel init_model(const ModelConfig& cfg);
void validate_model(const TinyModel& model);

/// Every trainable tensor in a fixed order. Polarized gate entries are
/// constants of the mixer and never appear here.
std::vector<ParamRef> parameters(TinyModel& model);
std::size_t parameter_count(const TinyModel& model);
/// Zero matrices shaped like parameters(), in the same order.
std::vector<Matrix> zero_gradients(const TinyModel& model);

/// The model recorded on a tape for one token sequence.
struct ModelGraph {
  std::vector<grad::Var> leaves;  // parallel to parameters()
  grad::Var logits;               // T x V
};

ModelGraph record_model(grad::Tape& tape, const TinyModel& model, std::span<const TokenId> ids, bool need_grad);

/// Logits (T x V) for one sequence.
Matrix forward_model(const TinyModel& model, std::span<const TokenId> ids);

/// Mean negative log-likelihood over masked positions. Throws
/// ValidationError when the mask selects nothing.
double masked_cross_entropy(const Matrix& logits, std::span<const TokenId> targets,
                            std::span<const std::uint8_t> mask);

/// Index of the largest logit, lowest id on ties.
TokenId argmax(std::span<const double> logits);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Checkpoint: the model config, the non-mixer tensors, then each block's
/// mixer in the params container.
void write_checkpoint(std::ostream& out, const TinyModel& model);
TinyModel read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const TinyModel& model);
TinyModel load_checkpoint(const std::string& path);

}  // namespace ssm::tasks
