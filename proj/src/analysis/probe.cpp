#include "ssm/analysis/probe.hpp"

#include <atomic>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <thread>

#include "ssm/core/matrix.hpp"

namespace ssm::analysis {
namespace {

std::vector<std::size_t> usable_positions(const tasks::ARExample& ex, std::size_t query) {
  std::vector<std::size_t> out;
  for (std::size_t t = 2 * ex.kv_pairs; t < query; ++t) {
    if (!ex.mask[t]) out.push_back(t);
  }
  return out;
}

struct QueryResult {
  std::size_t evaluated = 0, skipped = 0, clean = 0, corrupted = 0;
};

QueryResult probe_example(const tasks::TinyModel& model, const tasks::ARExample& ex, std::size_t index, Region region,
                          std::size_t k, std::uint64_t seed) {
  const std::size_t V = model.config.vocab_size;
  QueryResult r;
  std::size_t last = 0;
  for (std::size_t t = 0; t < ex.length(); ++t) {
    if (ex.mask[t]) last = t + 1;
  }
  if (last == 0) return r;
  const Matrix clean = tasks::forward_model(model, std::span(ex.input).first(last));
  std::size_t ordinal = 0;
  for (std::size_t q = 0; q < last; ++q) {
    if (!ex.mask[q]) continue;
    ++ordinal;
    if (usable_positions(ex, q).size() <= k) {
      ++r.skipped;
      continue;
    }
    ++r.evaluated;
    if (tasks::argmax(clean.row(q)) == ex.target[q]) ++r.clean;
    std::vector<tasks::TokenId> ids(ex.input.begin(), ex.input.begin() + static_cast<std::ptrdiff_t>(q + 1));
    std::seed_seq seq{seed, static_cast<std::uint64_t>(index), static_cast<std::uint64_t>(ordinal),
                      static_cast<std::uint64_t>(region)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<tasks::TokenId> token(0, static_cast<tasks::TokenId>(V - 1));
    for (std::size_t pos : corruption_positions(ex, q, region, k)) ids[pos] = token(rng);
    const Matrix logits = tasks::forward_model(model, ids);
    if (tasks::argmax(logits.row(q)) == ex.target[q]) ++r.corrupted;
  }
  return r;
}

}  // namespace

std::string_view region_name(Region r) { return r == Region::leading ? "leading" : "trailing"; }

Region parse_region(std::string_view name) {
  if (name == "leading") return Region::leading;
  if (name == "trailing") return Region::trailing;
  throw ValidationError("unknown region '" + std::string(name) + "' (expected leading or trailing)");
}

std::vector<std::size_t> corruption_positions(const tasks::ARExample& ex, std::size_t query, Region region,
                                              std::size_t k) {
  if (query >= ex.length() || !ex.mask[query]) throw ValidationError("position " + std::to_string(query) + " is not a query");
  const std::vector<std::size_t> usable = usable_positions(ex, query);
  if (k >= usable.size()) {
    throw ValidationError("k = " + std::to_string(k) + " leaves no untouched filler before the query at " +
                          std::to_string(query) + " (usable stretch " + std::to_string(usable.size()) + ")");
  }
  if (region == Region::leading) return {usable.begin(), usable.begin() + static_cast<std::ptrdiff_t>(k)};
  return {usable.end() - static_cast<std::ptrdiff_t>(k), usable.end()};
}

PerturbationReport perturbation_probe(const tasks::TinyModel& model, const tasks::ARDataset& data, Region region,
                                      std::size_t k, std::uint64_t seed, std::size_t threads) {
  if (data.vocab_size > model.config.vocab_size) throw ValidationError("dataset vocabulary exceeds the model's");
  std::vector<QueryResult> results(data.examples.size());
  const std::size_t n = data.examples.size();
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), std::max<std::size_t>(n, 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < n && !failed; i = next++) {
      try {
        results[i] = probe_example(model, data.examples[i], i, region, k, seed);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  PerturbationReport rep;
  rep.region = region;
  rep.k = k;
  rep.seed = seed;
  std::size_t clean = 0, corrupted = 0;
  for (const auto& r : results) {
    rep.evaluated += r.evaluated;
    rep.skipped += r.skipped;
    clean += r.clean;
    corrupted += r.corrupted;
  }
  if (rep.evaluated == 0) {
    throw ValidationError("k = " + std::to_string(k) + " is not shorter than the usable stretch of any query");
  }
  const double n_eval = static_cast<double>(rep.evaluated);
  rep.clean_accuracy = static_cast<double>(clean) / n_eval;
  rep.corrupted_accuracy = static_cast<double>(corrupted) / n_eval;
  rep.drop = rep.clean_accuracy - rep.corrupted_accuracy;
  return rep;
}

nlohmann::json to_json(const PerturbationReport& r) {
  return {{"region", std::string(region_name(r.region))},
          {"k", r.k},
          {"seed", r.seed},
          {"clean_accuracy", r.clean_accuracy},
          {"corrupted_accuracy", r.corrupted_accuracy},
          {"drop", r.drop},
          {"evaluated", r.evaluated},
          {"skipped", r.skipped}};
}

void write_probe_csv(std::ostream& out, const std::vector<PerturbationReport>& rows) {
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  out << "region,k,clean,corrupted,drop,evaluated,skipped\n";
  for (const auto& r : rows) {
    out << region_name(r.region) << ',' << r.k << ',' << r.clean_accuracy << ',' << r.corrupted_accuracy << ','
        << r.drop << ',' << r.evaluated << ',' << r.skipped << '\n';
  }
  out.precision(old);
}

}  // namespace ssm::analysis
