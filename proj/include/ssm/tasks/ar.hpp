#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssm::tasks {

using TokenId = std::uint32_t;

inline constexpr TokenId pad_token = 0;

/// Associative-recall generator settings. Keys come from [1, V/2], values
/// from [V/2 + 1, V - 1].
struct ARConfig {
  std::uint32_t vocab_size = 64;
  std::vector<std::size_t> lengths{64, 128};
  std::vector<double> kv_fractions{0.125, 0.25, 0.5};
  std::size_t examples_per_cell = 3334;
  double power_law = 1.0;  // query slot j is drawn with weight (j + 1)^-power_law
  std::size_t eval_length = 128;
  std::vector<std::size_t> eval_kv_pairs{8, 16, 32};
  std::size_t eval_examples = 500;  // per kv split
  std::uint64_t seed = 0;
};

/// Sequence layout: k_1 v_1 ... k_m v_m, then a query section whose even
/// offsets may hold a key. The target at a key occurrence is its value.
struct ARExample {
  std::vector<TokenId> input;
  std::vector<TokenId> target;
  std::vector<std::uint8_t> mask;
  std::size_t kv_pairs = 0;

  std::size_t length() const noexcept { return input.size(); }
  std::size_t masked() const noexcept;
};

struct ARDataset {
  std::uint32_t vocab_size = 0;
  std::vector<ARExample> examples;

  std::size_t masked_positions() const noexcept;
};

/// Throws ValidationError on an odd or too small vocabulary, a kv section
/// that does not fit, or more pairs than distinct keys.
ARExample generate_ar_example(std::mt19937_64& rng, std::size_t length, std::size_t kv_pairs,
                              std::uint32_t vocab_size, double power_law);

/// Training set: `examples_per_cell` examples for every (length, fraction)
/// cell with floor(fraction * length / 2) pairs, cells in config order.
ARDataset generate_ar_dataset(const ARConfig& cfg);

/// One evaluation set per entry of eval_kv_pairs, all at eval_length.
std::vector<ARDataset> generate_ar_eval_sets(const ARConfig& cfg);

void validate_ar_config(const ARConfig& cfg);

/// Empty when the example is well formed, otherwise the first problem found.
std::string check_ar_example(const ARExample& ex, std::uint32_t vocab_size);

nlohmann::json to_json(const ARConfig& cfg);
/// Missing keys keep their defaults; type errors throw nlohmann exceptions.
ARConfig ar_config_from_json(const nlohmann::json& j);

/// Binary container (payload kind dataset): per example u32 length,
/// u32 kv_pairs, input and target ids as u32, mask bytes.
void write_ar_dataset(std::ostream& out, const ARDataset& data);
ARDataset read_ar_dataset(std::istream& in);

/// Writes the container to `path` and returns its manifest: config echo,
/// counts and the zlib crc32 of the file bytes.
nlohmann::json save_ar_dataset(const std::string& path, const ARDataset& data, const nlohmann::json& config);
/// Reads `path`, checking the crc32 against `manifest` when it is not null.
ARDataset load_ar_dataset(const std::string& path, const nlohmann::json& manifest = nullptr);

std::uint32_t crc32_of(std::span<const char> bytes);

}  // namespace ssm::tasks
