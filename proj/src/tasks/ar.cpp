#include "ssm/tasks/ar.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "ssm/core/matrix.hpp"
#include "ssm/core/serialize.hpp"

namespace ssm::tasks {
namespace {

std::size_t pairs_for(std::size_t length, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(length) / 2.0));
}

}  // namespace

std::size_t ARExample::masked() const noexcept {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::size_t ARDataset::masked_positions() const noexcept {
  std::size_t n = 0;
  for (const auto& ex : examples) n += ex.masked();
  return n;
}

ARExample generate_ar_example(std::mt19937_64& rng, std::size_t length, std::size_t kv_pairs,
                              std::uint32_t vocab_size, double power_law) {
  if (vocab_size < 4 || vocab_size % 2 != 0) throw ValidationError("vocab size must be even and at least 4");
  if (kv_pairs == 0) throw ValidationError("need at least one key-value pair");
  const std::size_t num_keys = vocab_size / 2;
  if (kv_pairs > num_keys) {
    throw ValidationError(std::to_string(kv_pairs) + " distinct keys requested but the vocabulary holds " +
                          std::to_string(num_keys));
  }
  const std::size_t kv_len = 2 * kv_pairs;
  const std::size_t slots = length > kv_len ? (length - kv_len) / 2 : 0;
  if (slots < kv_pairs) {
    throw ValidationError("length " + std::to_string(length) + " cannot hold " + std::to_string(kv_pairs) +
                          " pairs and their queries");
  }

  std::vector<TokenId> keys(num_keys);
  std::iota(keys.begin(), keys.end(), TokenId{1});
  for (std::size_t i = 0; i < kv_pairs; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_keys - 1);
    std::swap(keys[i], keys[pick(rng)]);
  }
  keys.resize(kv_pairs);
  std::uniform_int_distribution<TokenId> value_dist(static_cast<TokenId>(num_keys + 1), vocab_size - 1);
  std::vector<TokenId> values(kv_pairs);
  for (auto& v : values) v = value_dist(rng);

  ARExample ex;
  ex.kv_pairs = kv_pairs;
  ex.input.assign(length, pad_token);
  ex.target.assign(length, pad_token);
  ex.mask.assign(length, 0);
  for (std::size_t i = 0; i < kv_pairs; ++i) {
    ex.input[2 * i] = keys[i];
    ex.input[2 * i + 1] = values[i];
  }

  // Query slots without replacement, slot j weighted by (j + 1)^-power_law.
  std::vector<double> weight(slots);
  for (std::size_t j = 0; j < slots; ++j) weight[j] = std::pow(static_cast<double>(j + 1), -power_law);
  std::vector<std::size_t> order(kv_pairs);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t q = 0; q < kv_pairs; ++q) {
    std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
    const std::size_t j = pick(rng);
    weight[j] = 0.0;
    const std::size_t pos = kv_len + 2 * j;
    const std::size_t pair = order[q];
    ex.input[pos] = keys[pair];
    ex.target[pos] = values[pair];
    ex.mask[pos] = 1;
  }
  return ex;
}

void validate_ar_config(const ARConfig& cfg) {
  if (cfg.vocab_size < 4 || cfg.vocab_size % 2 != 0) throw ValidationError("vocab_size must be even and at least 4");
  if (cfg.lengths.empty() || cfg.kv_fractions.empty()) throw ValidationError("lengths and kv_fractions must be non-empty");
  for (std::size_t L : cfg.lengths) {
    for (double f : cfg.kv_fractions) {
      if (!(f > 0.0 && f <= 0.5)) throw ValidationError("kv fractions must lie in (0, 0.5]");
      if (pairs_for(L, f) == 0) {
        throw ValidationError("kv section of length " + std::to_string(L) + " x " + std::to_string(f) +
                              " holds no pair");
      }
      if (pairs_for(L, f) > cfg.vocab_size / 2) throw ValidationError("vocabulary too small for the requested pairs");
    }
  }
  for (std::size_t m : cfg.eval_kv_pairs) {
    if (m == 0 || 4 * m > cfg.eval_length) throw ValidationError("eval kv count does not fit the eval length");
    if (m > cfg.vocab_size / 2) throw ValidationError("vocabulary too small for the requested pairs");
  }
  if (!(cfg.power_law >= 0.0) || !std::isfinite(cfg.power_law)) throw ValidationError("power_law must be >= 0");
}

ARDataset generate_ar_dataset(const ARConfig& cfg) {
  validate_ar_config(cfg);
  std::mt19937_64 rng(cfg.seed);
  ARDataset data;
  data.vocab_size = cfg.vocab_size;
  for (std::size_t L : cfg.lengths) {
    for (double f : cfg.kv_fractions) {
      const std::size_t pairs = pairs_for(L, f);
      for (std::size_t i = 0; i < cfg.examples_per_cell; ++i) {
        data.examples.push_back(generate_ar_example(rng, L, pairs, cfg.vocab_size, cfg.power_law));
      }
    }
  }
  return data;
}

std::vector<ARDataset> generate_ar_eval_sets(const ARConfig& cfg) {
  validate_ar_config(cfg);
  std::vector<ARDataset> sets;
  for (std::size_t s = 0; s < cfg.eval_kv_pairs.size(); ++s) {
    std::mt19937_64 rng(cfg.seed ^ (0xe7a1ULL + 0x9e3779b97f4a7c15ULL * (s + 1)));
    ARDataset data;
    data.vocab_size = cfg.vocab_size;
    for (std::size_t i = 0; i < cfg.eval_examples; ++i) {
      data.examples.push_back(
          generate_ar_example(rng, cfg.eval_length, cfg.eval_kv_pairs[s], cfg.vocab_size, cfg.power_law));
    }
    sets.push_back(std::move(data));
  }
  return sets;
}

std::string check_ar_example(const ARExample& ex, std::uint32_t vocab_size) {
  const std::size_t L = ex.length();
  if (ex.target.size() != L || ex.mask.size() != L) return "input, target and mask lengths differ";
  const TokenId half = vocab_size / 2;
  if (ex.kv_pairs == 0 || 2 * ex.kv_pairs > L) return "kv section does not fit";
  std::vector<std::pair<TokenId, TokenId>> kv;
  for (std::size_t i = 0; i < ex.kv_pairs; ++i) kv.emplace_back(ex.input[2 * i], ex.input[2 * i + 1]);
  std::set<TokenId> seen;
  for (const auto& [k, v] : kv) {
    if (k < 1 || k > half) return "key out of range";
    if (v <= half || v >= vocab_size) return "value out of range";
    if (!seen.insert(k).second) return "repeated key in kv section";
  }
  std::set<TokenId> queried;
  for (std::size_t i = 0; i < L; ++i) {
    if (ex.input[i] >= vocab_size || ex.target[i] >= vocab_size) return "token out of range";
    if (!ex.mask[i]) continue;
    if (i < 2 * ex.kv_pairs) return "masked position inside the kv section";
    const auto it = std::find_if(kv.begin(), kv.end(), [&](const auto& p) { return p.first == ex.input[i]; });
    if (it == kv.end()) return "masked token is not a key of the kv section";
    if (it->second != ex.target[i]) return "target does not match the bound value";
    if (!queried.insert(ex.input[i]).second) return "key queried twice";
  }
  if (queried.size() != ex.kv_pairs) return "not every key is queried";
  return {};
}

nlohmann::json to_json(const ARConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size},
          {"lengths", cfg.lengths},
          {"kv_fractions", cfg.kv_fractions},
          {"examples_per_cell", cfg.examples_per_cell},
          {"power_law", cfg.power_law},
          {"eval_length", cfg.eval_length},
          {"eval_kv_pairs", cfg.eval_kv_pairs},
          {"eval_examples", cfg.eval_examples},
          {"seed", cfg.seed}};
}

ARConfig ar_config_from_json(const nlohmann::json& j) {
  ARConfig cfg;
  if (j.is_null()) return cfg;
  cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
  cfg.lengths = j.value("lengths", cfg.lengths);
  cfg.kv_fractions = j.value("kv_fractions", cfg.kv_fractions);
  cfg.examples_per_cell = j.value("examples_per_cell", cfg.examples_per_cell);
  cfg.power_law = j.value("power_law", cfg.power_law);
  cfg.eval_length = j.value("eval_length", cfg.eval_length);
  cfg.eval_kv_pairs = j.value("eval_kv_pairs", cfg.eval_kv_pairs);
  cfg.eval_examples = j.value("eval_examples", cfg.eval_examples);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

void write_ar_dataset(std::ostream& out, const ARDataset& data) {
  io::BinaryWriter w(out);
  w.header({io::format_version, io::PayloadKind::dataset, 0, 0, data.examples.size(), 0, data.vocab_size});
  for (const auto& ex : data.examples) {
    w.u32(static_cast<std::uint32_t>(ex.length()));
    w.u32(static_cast<std::uint32_t>(ex.kv_pairs));
    for (TokenId t : ex.input) w.u32(t);
    for (TokenId t : ex.target) w.u32(t);
    for (std::uint8_t m : ex.mask) w.u8(m);
  }
}

ARDataset read_ar_dataset(std::istream& in) {
  io::BinaryReader r(in);
  const io::ContainerHeader h = r.header(io::PayloadKind::dataset);
  if (h.channels == 0 || h.channels > (1u << 30)) throw io::FormatError("bad vocabulary size in dataset header");
  ARDataset data;
  data.vocab_size = static_cast<std::uint32_t>(h.channels);
  for (std::uint64_t i = 0; i < h.steps; ++i) {
    ARExample ex;
    const std::uint32_t L = r.u32();
    if (L > (1u << 24)) throw io::FormatError("example length out of range");
    ex.kv_pairs = r.u32();
    ex.input.resize(L);
    ex.target.resize(L);
    ex.mask.resize(L);
    for (auto& t : ex.input) t = r.u32();
    for (auto& t : ex.target) t = r.u32();
    for (auto& m : ex.mask) m = r.u8();
    data.examples.push_back(std::move(ex));
  }
  return data;
}

std::uint32_t crc32_of(std::span<const char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

nlohmann::json save_ar_dataset(const std::string& path, const ARDataset& data, const nlohmann::json& config) {
  std::ostringstream buf;
  write_ar_dataset(buf, data);
  const std::string bytes = buf.str();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path);

  std::map<std::size_t, std::size_t> by_pairs;
  for (const auto& ex : data.examples) ++by_pairs[ex.kv_pairs];
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [pairs, n] : by_pairs) cells.push_back({{"kv_pairs", pairs}, {"examples", n}});
  return {{"config", config},
          {"format_version", io::format_version},
          {"vocab_size", data.vocab_size},
          {"examples", data.examples.size()},
          {"masked_positions", data.masked_positions()},
          {"by_kv_pairs", cells},
          {"bytes", bytes.size()},
          {"crc32", crc32_of(bytes)}};
}

ARDataset load_ar_dataset(const std::string& path, const nlohmann::json& manifest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!manifest.is_null() && manifest.contains("crc32")) {
    const auto expected = manifest.at("crc32").get<std::uint32_t>();
    if (crc32_of(bytes) != expected) throw io::FormatError("checksum mismatch for " + path);
  }
  std::istringstream stream(bytes);
  return read_ar_dataset(stream);
}

}  // namespace ssm::tasks
