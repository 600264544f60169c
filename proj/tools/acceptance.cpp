// Runs the acceptance criteria and prints one pass/fail line per criterion.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssm/checks/checks.hpp"

namespace {

using ssm::checks::CheckResult;

void print(const CheckResult& r) {
  std::printf("criterion %2d %s  %s: %s [%.1f s]\n", r.id, r.pass ? "PASS" : "FAIL", r.name.c_str(),
              r.summary.c_str(), r.seconds);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-10"};
  std::vector<int> only;
  std::string cache_dir, ar_config, report;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  bool verbose = false, print_config = false;
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 10));
  app.add_option("--cache-dir", cache_dir, "Reuse trained AR checkpoints from this directory");
  app.add_option("--ar-config", ar_config, "JSON experiment file for criteria 7 and 10")->check(CLI::ExistingFile);
  app.add_option("--threads", threads, "Worker threads for training and evaluation")->check(CLI::PositiveNumber);
  app.add_option("--report", report, "Write all results as JSON");
  app.add_flag("-v,--verbose", verbose, "Print training progress");
  app.add_flag("--print-ar-config", print_config, "Print the resolved AR experiment and exit");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int id) { return selected.empty() || selected.count(id) > 0; };

  ssm::checks::ARExperiment experiment = ssm::checks::default_ar_experiment();
  if (!ar_config.empty()) {
    std::ifstream in(ar_config);
    try {
      experiment = ssm::checks::ar_experiment_from_json(nlohmann::json::parse(in));
    } catch (const std::exception& e) {
      std::cerr << "acceptance: " << ar_config << ": " << e.what() << '\n';
      return 2;
    }
  }
  if (!cache_dir.empty()) experiment.cache_dir = cache_dir;
  experiment.threads = threads;
  experiment.verbose = verbose;
  if (print_config) {
    std::cout << ssm::checks::to_json(experiment).dump(2) << '\n';
    return 0;
  }

  std::vector<CheckResult> results;
  auto run = [&](int id, auto&& fn) {
    if (!wanted(id)) return;
    try {
      results.push_back(fn());
    } catch (const std::exception& e) {
      CheckResult r;
      r.id = id;
      r.name = "error";
      r.summary = e.what();
      results.push_back(r);
    }
    print(results.back());
  };
  run(1, [] { return ssm::checks::parallel_form(); });
  run(2, [] { return ssm::checks::gradients(); });
  run(3, [] { return ssm::checks::recency(); });
  run(4, [] { return ssm::checks::oversmoothing(); });
  run(5, [] { return ssm::checks::low_pass(); });
  run(6, [] { return ssm::checks::polarization(); });
  run(7, [&] { return ssm::checks::ar_ordering(experiment); });
  run(8, [] { return ssm::checks::smoothness_dynamics(); });
  run(9, [] { return ssm::checks::gate_gap(); });
  run(10, [&] { return ssm::checks::perturbation_direction(experiment); });

  std::size_t failed = 0;
  for (const auto& r : results) failed += r.pass ? 0 : 1;
  std::printf("%zu/%zu criteria passed\n", results.size() - failed, results.size());

  if (!report.empty()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : results) {
      j.push_back({{"id", r.id}, {"name", r.name}, {"pass", r.pass}, {"summary", r.summary},
                   {"seconds", r.seconds}, {"details", r.details}});
    }
    std::ofstream(report) << j.dump(2) << '\n';
  }
  return failed == 0 ? 0 : 1;
}
