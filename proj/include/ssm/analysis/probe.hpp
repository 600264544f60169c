#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ssm/tasks/ar.hpp"
#include "ssm/tasks/model.hpp"

namespace ssm::analysis {

enum class Region : std::uint8_t { leading, trailing };

std::string_view region_name(Region r);
/// Throws ValidationError on anything but "leading" or "trailing".
Region parse_region(std::string_view name);

/// For the query at masked position q, the usable positions are the filler
/// tokens between the kv section and q. The leading region is the first k of
/// them, the trailing region the last k. Queries whose usable stretch is not
/// longer than k are skipped.
struct PerturbationReport {
  Region region = Region::trailing;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  double clean_accuracy = 0.0;
  double corrupted_accuracy = 0.0;
  double drop = 0.0;  // clean - corrupted
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

/// Replaces the region with uniform tokens from [0, V) drawn from a stream
/// keyed by (seed, example, query) and scores the argmax at the query. Throws
/// ValidationError when no query has a usable stretch longer than k.
PerturbationReport perturbation_probe(const tasks::TinyModel& model, const tasks::ARDataset& data, Region region,
                                      std::size_t k, std::uint64_t seed = 0, std::size_t threads = 1);

/// The positions perturbation_probe would overwrite for the query at `query`.
std::vector<std::size_t> corruption_positions(const tasks::ARExample& ex, std::size_t query, Region region,
                                              std::size_t k);

nlohmann::json to_json(const PerturbationReport& r);
/// "region,k,clean,corrupted,drop,evaluated,skipped"
void write_probe_csv(std::ostream& out, const std::vector<PerturbationReport>& rows);

}  // namespace ssm::analysis
