// Command-line entry point: theorem checks, analyses, AR data, training,
// evaluation and probing. Exit codes: 0 ok, 1 check or run failed, 2 usage
// or config error.
#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssm/analysis/influence.hpp"
#include "ssm/analysis/probe.hpp"
#include "ssm/analysis/report.hpp"
#include "ssm/analysis/smoothness.hpp"
#include "ssm/analysis/spectrum.hpp"
#include "ssm/checks/checks.hpp"
#include "ssm/params/init.hpp"
#include "ssm/tasks/train.hpp"

#ifndef SSM_VERSION_STRING
#define SSM_VERSION_STRING "unknown"
#endif

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  int verbosity = 0;
  std::string checkpoint;
  std::string command;
};

void log(const Options& o, const std::string& msg) {
  if (o.verbosity > 0) std::cerr << msg << '\n';
}

json load_config(const Options& o) {
  if (o.config.empty()) return json::object();
  std::ifstream in(o.config);
  if (!in) throw ConfigError(o.config + ": cannot open");
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw ConfigError(o.config + ": top level must be an object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError(o.config + ": " + e.what());
  }
}

// Rejects keys that the defaults do not have, recursing into objects.
void check_known(const json& j, const json& defaults, const std::string& path) {
  for (const auto& [key, value] : j.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown field '" + where + "'");
    if (value.is_object() && defaults.at(key).is_object()) check_known(value, defaults.at(key), where);
  }
}

template <class T>
T field(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("field '" + key + "': " + e.what());
  }
}

template <class F>
auto section(const json& j, const std::string& key, F&& parse) {
  try {
    return parse(j.contains(key) ? j.at(key) : json::object());
  } catch (const json::exception& e) {
    throw ConfigError("field '" + key + "': " + e.what());
  } catch (const ssm::ValidationError& e) {
    throw ConfigError("field '" + key + "': " + e.what());
  }
}

ssm::Variant variant_field(const json& j, const std::string& key, ssm::Variant fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return ssm::parse_variant(j.at(key).get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError("field '" + key + "': " + e.what());
  }
}

ssm::PolarizationConfig polarization_field(const json& j, const std::string& key) {
  ssm::PolarizationConfig p;
  if (!j.contains(key)) return p;
  const json& v = j.at(key);
  if (v.is_boolean()) {
    p.one_channel = p.zero_channel = v.get<bool>();
    return p;
  }
  p.one_channel = field(v, "one_channel", false);
  p.zero_channel = field(v, "zero_channel", false);
  return p;
}

json polarization_json(const ssm::PolarizationConfig& p) {
  return {{"one_channel", p.one_channel}, {"zero_channel", p.zero_channel}};
}

fs::path prepare_out(const Options& o) {
  fs::create_directories(o.out);
  return fs::path(o.out);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

template <class F>
void write_csv(const fs::path& path, F&& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  body(out);
}

void write_manifest(const Options& o, const json& resolved, const std::vector<std::string>& files) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json m = {{"tool", "ssmctl"},   {"version", SSM_VERSION_STRING}, {"command", o.command},
            {"config", resolved}, {"config_file", o.config},        {"threads", o.threads},
            {"files", files},     {"created", stamp}};
  write_text(fs::path(o.out) / "manifest.json", m.dump(2) + "\n");
}

ssm::Matrix random_input(std::uint64_t seed, std::size_t T, std::size_t D) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  ssm::Matrix x(T, D);
  for (double& v : x.flat()) v = dist(rng);
  return x;
}

// check theorems ----------------------------------------------------------

int check_theorems(const Options& o) {
  const json cfg = load_config(o);
  const json defaults = {{"parallel_instances", 1000}, {"gradient_pairs", 200}, {"oversmoothing_instances", 1000},
                         {"lowpass_instances", 100},   {"seed", 1}};
  check_known(cfg, defaults, "");
  json resolved = defaults;
  for (const auto& [k, v] : cfg.items()) resolved[k] = v;
  const auto seed = o.seed.value_or(field<std::uint64_t>(resolved, "seed", 1));
  resolved["seed"] = seed;
  const auto n1 = field<std::size_t>(resolved, "parallel_instances", 1000);
  const auto n2 = field<std::size_t>(resolved, "gradient_pairs", 200);
  const auto n4 = field<std::size_t>(resolved, "oversmoothing_instances", 1000);
  const auto n5 = field<std::size_t>(resolved, "lowpass_instances", 100);

  const fs::path out = prepare_out(o);
  std::vector<ssm::checks::CheckResult> results;
  results.push_back(ssm::checks::parallel_form(n1, seed));
  results.push_back(ssm::checks::gradients(n2));
  results.push_back(ssm::checks::recency(seed));
  results.push_back(ssm::checks::oversmoothing(n4, seed));
  results.push_back(ssm::checks::low_pass(n5, seed));

  bool ok = true;
  json report = json::array();
  write_csv(out / "checks.csv", [&](std::ostream& csv) {
    csv << "id,name,pass\n";
    for (const auto& r : results) csv << r.id << ',' << r.name << ',' << (r.pass ? 1 : 0) << '\n';
  });
  for (const auto& r : results) {
    ok = ok && r.pass;
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.summary << '\n';
    report.push_back({{"id", r.id}, {"name", r.name}, {"pass", r.pass}, {"summary", r.summary},
                      {"details", r.details}});
  }
  write_text(out / "report.json", report.dump(2) + "\n");
  write_manifest(o, resolved, {"checks.csv", "report.json"});
  return ok ? 0 : 1;
}

// analyze -------------------------------------------------------------------

struct LayerSetup {
  ssm::Variant variant = ssm::Variant::mamba;
  std::size_t state_dim = 16;
  std::size_t channels = 4;
  std::size_t steps = 256;
  std::uint64_t seed = 1;
  ssm::PolarizationConfig polarization;
};

json layer_defaults() {
  return {{"variant", "mamba"}, {"state_dim", 16}, {"channels", 4}, {"steps", 256}, {"seed", 1},
          {"polarization", {{"one_channel", false}, {"zero_channel", false}}}};
}

LayerSetup layer_setup(const Options& o, const json& cfg) {
  LayerSetup s;
  s.variant = variant_field(cfg, "variant", s.variant);
  s.state_dim = field(cfg, "state_dim", s.state_dim);
  s.channels = field(cfg, "channels", s.channels);
  s.steps = field(cfg, "steps", s.steps);
  s.seed = o.seed.value_or(field(cfg, "seed", s.seed));
  s.polarization = polarization_field(cfg, "polarization");
  return s;
}

json to_json(const LayerSetup& s) {
  return {{"variant", ssm::variant_name(s.variant)}, {"state_dim", s.state_dim}, {"channels", s.channels},
          {"steps", s.steps}, {"seed", s.seed}, {"polarization", polarization_json(s.polarization)}};
}

ssm::LayerParams make_layer(const LayerSetup& s) {
  // Polarized entries come on top of the free state entries.
  return ssm::init_params(s.variant, s.state_dim + s.polarization.extra_channels(), s.channels, s.seed,
                          s.polarization);
}

int analyze_influence(const Options& o) {
  const json cfg = load_config(o);
  json defaults = layer_defaults();
  defaults["output_channel"] = 0;
  defaults["first_lag"] = 0;
  defaults["last_lag"] = -1;
  check_known(cfg, defaults, "");
  const LayerSetup s = layer_setup(o, cfg);
  const auto channel = field<std::size_t>(cfg, "output_channel", 0);
  const auto first = field<std::size_t>(cfg, "first_lag", 0);
  const auto last = field<long long>(cfg, "last_lag", -1);
  json resolved = to_json(s);
  resolved["output_channel"] = channel;
  resolved["first_lag"] = first;
  resolved["last_lag"] = last;

  const ssm::LayerParams p = make_layer(s);
  const ssm::Matrix x = random_input(s.seed + 1, s.steps, s.channels);
  const auto m = ssm::analysis::influence_matrix(p, x, channel);
  ssm::analysis::LagWindow window;
  window.first = first;
  if (last >= 0) window.last = static_cast<std::size_t>(last);
  const auto fit = ssm::analysis::fit_decay_rate(m, window);

  const fs::path out = prepare_out(o);
  write_csv(out / "influence.csv", [&](std::ostream& csv) { ssm::analysis::write_influence_csv(csv, m); });
  write_csv(out / "decay.csv", [&](std::ostream& csv) { ssm::analysis::write_decay_csv(csv, fit); });
  write_text(out / "report.json", ssm::analysis::to_json(m, fit).dump(2) + "\n");
  write_manifest(o, resolved, {"influence.csv", "decay.csv", "report.json"});
  std::cout << "kappa_hat " << fit.kappa_hat << " r_squared " << fit.r_squared << '\n';
  return 0;
}

int analyze_smoothness(const Options& o) {
  const json cfg = load_config(o);
  const json defaults = {{"variant", "rwkv"}, {"depth", 8}, {"state_dim", 4}, {"channels", 8}, {"steps", 64},
                         {"seed", 1}};
  check_known(cfg, defaults, "");
  const auto variant = variant_field(cfg, "variant", ssm::Variant::rwkv);
  const auto depth = field<std::size_t>(cfg, "depth", 8);
  const auto n = field<std::size_t>(cfg, "state_dim", 4);
  const auto d = field<std::size_t>(cfg, "channels", 8);
  const auto T = field<std::size_t>(cfg, "steps", 64);
  const auto seed = o.seed.value_or(field<std::uint64_t>(cfg, "seed", 1));
  const json resolved = {{"variant", ssm::variant_name(variant)}, {"depth", depth}, {"state_dim", n},
                         {"channels", d}, {"steps", T}, {"seed", seed}};

  const auto stack = ssm::analysis::random_smoothing_stack(depth, n, d, seed, variant);
  const auto layers = ssm::analysis::layerwise_smoothness(stack, random_input(seed + 1, T, d));
  std::vector<ssm::analysis::BoundReport> bounds;
  json report = json::array();
  for (const auto& l : layers) {
    bounds.insert(bounds.end(), l.bounds.begin(), l.bounds.end());
    report.push_back(ssm::analysis::to_json(l));
  }
  const fs::path out = prepare_out(o);
  write_csv(out / "smoothness.csv", [&](std::ostream& csv) { ssm::analysis::write_smoothness_csv(csv, layers); });
  write_csv(out / "bounds.csv", [&](std::ostream& csv) { ssm::analysis::write_bound_csv(csv, bounds); });
  write_text(out / "report.json", report.dump(2) + "\n");
  write_manifest(o, resolved, {"smoothness.csv", "bounds.csv", "report.json"});
  return 0;
}

int analyze_spectrum(const Options& o) {
  const json cfg = load_config(o);
  const json defaults = {{"state_dim", 16}, {"channels", 4}, {"channel", 0}, {"seed", 1},
                         {"epsilons", {0.1, 0.01}}, {"omega_min", 1e-2}, {"omega_max", 1e4}, {"points", 256}};
  check_known(cfg, defaults, "");
  const auto n = field<std::size_t>(cfg, "state_dim", 16);
  const auto d = field<std::size_t>(cfg, "channels", 4);
  const auto channel = field<std::size_t>(cfg, "channel", 0);
  const auto seed = o.seed.value_or(field<std::uint64_t>(cfg, "seed", 1));
  const auto eps = field<std::vector<double>>(cfg, "epsilons", {0.1, 0.01});
  const auto lo = field<double>(cfg, "omega_min", 1e-2);
  const auto hi = field<double>(cfg, "omega_max", 1e4);
  const auto points = field<std::size_t>(cfg, "points", 256);
  const json resolved = {{"state_dim", n}, {"channels", d}, {"channel", channel}, {"seed", seed},
                         {"epsilons", eps}, {"omega_min", lo}, {"omega_max", hi}, {"points", points}};
  if (channel >= d) throw ConfigError("field 'channel': must be below channels");

  const auto p = std::get<ssm::S4Params>(ssm::init_params(ssm::Variant::s4, n, d, seed));
  const auto grid = ssm::analysis::log_grid(lo, hi, points);
  const auto fr = ssm::analysis::frequency_response(p, channel, grid, eps);
  const fs::path out = prepare_out(o);
  write_csv(out / "spectrum.csv", [&](std::ostream& csv) { ssm::analysis::write_spectrum_csv(csv, fr); });
  write_text(out / "report.json", ssm::analysis::to_json(fr).dump(2) + "\n");
  write_manifest(o, resolved, {"spectrum.csv", "report.json"});
  return 0;
}

int analyze_gate_gap(const Options& o) {
  const json cfg = load_config(o);
  json defaults = layer_defaults();
  defaults["steps"] = 64;
  defaults["inputs"] = 4;
  defaults["layer"] = 0;
  check_known(cfg, defaults, "");
  json with_steps = cfg;
  if (!with_steps.contains("steps")) with_steps["steps"] = 64;
  const LayerSetup s = layer_setup(o, with_steps);
  const auto inputs = field<std::size_t>(cfg, "inputs", 4);
  const auto layer = field<std::size_t>(cfg, "layer", 0);
  json resolved = to_json(s);
  resolved["inputs"] = inputs;
  resolved["layer"] = layer;

  ssm::LayerParams p;
  if (!o.checkpoint.empty()) {
    // The mixer of a trained model, fed random inputs of its width.
    const auto model = ssm::tasks::load_checkpoint(o.checkpoint);
    if (layer >= model.blocks.size()) throw ConfigError("field 'layer': model has fewer layers");
    p = model.blocks[layer].mixer;
    resolved["checkpoint"] = o.checkpoint;
  } else {
    p = make_layer(s);
  }
  std::vector<ssm::Matrix> xs;
  for (std::size_t i = 0; i < inputs; ++i) xs.push_back(random_input(s.seed + 1 + i, s.steps, ssm::channels_of(p)));
  const auto h = ssm::analysis::gate_gap_histogram(p, xs);
  const fs::path out = prepare_out(o);
  write_csv(out / "gate_gap.csv", [&](std::ostream& csv) { ssm::analysis::write_histogram_csv(csv, h); });
  write_text(out / "report.json", ssm::analysis::to_json(h).dump(2) + "\n");
  write_manifest(o, resolved, {"gate_gap.csv", "report.json"});
  std::cout << "share of gaps below 0.5: " << h.share_below_half << '\n';
  return 0;
}

// AR pipeline ---------------------------------------------------------------

struct ARSetup {
  ssm::tasks::ARConfig data;
  ssm::tasks::ModelConfig model;
  ssm::tasks::TrainConfig train;
  std::size_t probe_k = 8;
  std::vector<std::string> probe_regions{"leading", "trailing"};
  std::size_t probe_split = 0;
};

json ar_defaults() {
  const ARSetup s;
  return {{"data", ssm::tasks::to_json(s.data)},
          {"model", ssm::tasks::to_json(s.model)},
          {"train", ssm::tasks::to_json(s.train)},
          {"probe", {{"k", s.probe_k}, {"regions", s.probe_regions}, {"split", s.probe_split}}}};
}

ARSetup ar_setup(const Options& o) {
  const json cfg = load_config(o);
  check_known(cfg, ar_defaults(), "");
  ARSetup s;
  s.data = section(cfg, "data", ssm::tasks::ar_config_from_json);
  s.model = section(cfg, "model", ssm::tasks::model_config_from_json);
  s.train = section(cfg, "train", ssm::tasks::train_config_from_json);
  const json probe = cfg.value("probe", json::object());
  s.probe_k = field(probe, "k", s.probe_k);
  s.probe_regions = field(probe, "regions", s.probe_regions);
  s.probe_split = field(probe, "split", s.probe_split);
  if (o.seed) s.data.seed = s.model.seed = s.train.seed = *o.seed;
  s.train.threads = o.threads;
  s.model.vocab_size = s.data.vocab_size;
  try {
    ssm::tasks::validate_ar_config(s.data);
    ssm::tasks::validate_train_config(s.train);
    for (const auto& r : s.probe_regions) ssm::analysis::parse_region(r);
  } catch (const ssm::ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (s.probe_split >= s.data.eval_kv_pairs.size()) throw ConfigError("field 'probe.split': no such eval split");
  return s;
}

json to_json(const ARSetup& s) {
  json train = ssm::tasks::to_json(s.train);
  train.erase("threads");
  return {{"data", ssm::tasks::to_json(s.data)},
          {"model", ssm::tasks::to_json(s.model)},
          {"train", train},
          {"probe", {{"k", s.probe_k}, {"regions", s.probe_regions}, {"split", s.probe_split}}}};
}

ssm::tasks::TinyModel model_for(const Options& o, const ARSetup& s) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  auto model = ssm::tasks::load_checkpoint(o.checkpoint);
  if (model.config.vocab_size != s.data.vocab_size) {
    throw ConfigError("checkpoint vocabulary " + std::to_string(model.config.vocab_size) +
                      " does not match data.vocab_size " + std::to_string(s.data.vocab_size));
  }
  return model;
}

void write_accuracy_csv(std::ostream& csv, const ssm::tasks::EvalReport& r) {
  csv << "split,kv_pairs,loss,accuracy,masked,correct\n";
  csv.precision(17);
  for (const auto& m : r.splits) {
    csv << m.split << ',' << m.kv_pairs << ',' << m.loss << ',' << m.accuracy << ',' << m.masked << ','
        << m.correct << '\n';
  }
}

int data_gen_ar(const Options& o) {
  const ARSetup s = ar_setup(o);
  const fs::path out = prepare_out(o);
  const json echo = ssm::tasks::to_json(s.data);
  std::vector<std::string> files{"train.bin", "train.json"};
  const auto train = ssm::tasks::generate_ar_dataset(s.data);
  write_text(out / "train.json", ssm::tasks::save_ar_dataset((out / "train.bin").string(), train, echo).dump(2) + "\n");
  for (const auto& set : ssm::tasks::generate_ar_eval_sets(s.data)) {
    const std::string stem = "eval_kv" + std::to_string(set.examples.front().kv_pairs);
    write_text(out / (stem + ".json"),
               ssm::tasks::save_ar_dataset((out / (stem + ".bin")).string(), set, echo).dump(2) + "\n");
    files.push_back(stem + ".bin");
    files.push_back(stem + ".json");
  }
  write_manifest(o, to_json(s), files);
  std::cout << "wrote " << train.examples.size() << " training examples to " << out.string() << '\n';
  return 0;
}

int train_ar(const Options& o) {
  const ARSetup s = ar_setup(o);
  const fs::path out = prepare_out(o);
  auto model = ssm::tasks::init_model(s.model);
  const auto train = ssm::tasks::generate_ar_dataset(s.data);
  const auto evals = ssm::tasks::generate_ar_eval_sets(s.data);
  log(o, "training " + std::to_string(ssm::tasks::parameter_count(model)) + " parameters on " +
             std::to_string(train.examples.size()) + " examples");
  const auto result = ssm::tasks::train_ar(model, train, evals, s.train, [&](const auto& recs) {
    std::ostringstream line;
    line << "epoch " << recs.front().epoch;
    for (const auto& r : recs) line << "  " << r.split << " " << r.accuracy;
    log(o, line.str());
  });
  ssm::tasks::save_checkpoint((out / "model.ckpt").string(), model);
  write_csv(out / "metrics.csv", [&](std::ostream& csv) { ssm::tasks::write_metrics_csv(csv, result.history); });
  const auto final_eval = s.train.epochs == 0 ? ssm::tasks::evaluate_ar_sets(model, evals, o.threads)
                                              : result.final_eval;
  write_csv(out / "accuracy.csv", [&](std::ostream& csv) { write_accuracy_csv(csv, final_eval); });
  write_text(out / "eval.json", ssm::tasks::to_json(final_eval).dump(2) + "\n");
  write_manifest(o, to_json(s), {"model.ckpt", "metrics.csv", "accuracy.csv", "eval.json"});
  std::cout << "mean accuracy " << final_eval.mean_accuracy << '\n';
  return 0;
}

int eval_ar(const Options& o) {
  const ARSetup s = ar_setup(o);
  const auto model = model_for(o, s);
  const auto evals = ssm::tasks::generate_ar_eval_sets(s.data);
  const auto report = ssm::tasks::evaluate_ar_sets(model, evals, o.threads);
  const fs::path out = prepare_out(o);
  write_csv(out / "accuracy.csv", [&](std::ostream& csv) { write_accuracy_csv(csv, report); });
  write_text(out / "eval.json", ssm::tasks::to_json(report).dump(2) + "\n");
  json resolved = to_json(s);
  resolved["checkpoint"] = o.checkpoint;
  write_manifest(o, resolved, {"accuracy.csv", "eval.json"});
  for (const auto& m : report.splits) std::cout << m.split << ' ' << m.accuracy << '\n';
  return 0;
}

int probe_perturb(const Options& o) {
  const ARSetup s = ar_setup(o);
  const auto model = model_for(o, s);
  const auto evals = ssm::tasks::generate_ar_eval_sets(s.data);
  const auto& set = evals.at(s.probe_split);
  std::vector<ssm::analysis::PerturbationReport> rows;
  json report = json::array();
  for (const auto& name : s.probe_regions) {
    rows.push_back(ssm::analysis::perturbation_probe(model, set, ssm::analysis::parse_region(name), s.probe_k,
                                                     s.data.seed, o.threads));
    report.push_back(ssm::analysis::to_json(rows.back()));
    std::cout << name << " drop " << rows.back().drop << '\n';
  }
  const fs::path out = prepare_out(o);
  write_csv(out / "probe.csv", [&](std::ostream& csv) { ssm::analysis::write_probe_csv(csv, rows); });
  write_text(out / "report.json", report.dump(2) + "\n");
  json resolved = to_json(s);
  resolved["checkpoint"] = o.checkpoint;
  write_manifest(o, resolved, {"probe.csv", "report.json"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"State-space model analysis and associative-recall toolkit"};
  app.set_version_flag("--version", SSM_VERSION_STRING);
  app.require_subcommand(1);
  Options o;
  int verbose = 0;
  bool quiet = false;
  app.add_option("-c,--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("-o,--out", o.out, "Output directory")->capture_default_str();
  app.add_option("--seed", o.seed, "Override every seed in the config");
  app.add_option("-j,--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_flag("-v,--verbose", verbose, "More progress output");
  app.add_flag("-q,--quiet", quiet, "No progress output");
  app.fallthrough();

  std::function<int()> action;
  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& help, int (*fn)(const Options&),
                  bool checkpoint) {
    CLI::App* sub = parent->add_subcommand(name, help);
    if (checkpoint) sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
    sub->callback([&, fn, name, parent] {
      o.command = parent->get_name() + " " + name;
      action = [&, fn] { return fn(o); };
    });
    return sub;
  };

  CLI::App* check = app.add_subcommand("check", "Property checks")->require_subcommand(1);
  leaf(check, "theorems", "Parallel form, gradients, recency, over-smoothing and low-pass suites", check_theorems,
       false);
  CLI::App* analyze = app.add_subcommand("analyze", "Single analyses")->require_subcommand(1);
  leaf(analyze, "influence", "Influence matrix and decay fit", analyze_influence, false);
  leaf(analyze, "smoothness", "Layerwise smoothness of a random stack", analyze_smoothness, false);
  leaf(analyze, "spectrum", "Frequency response of an S4 channel", analyze_spectrum, false);
  leaf(analyze, "gate-gap", "Gate-gap histogram", analyze_gate_gap, true);
  CLI::App* data = app.add_subcommand("data", "Datasets")->require_subcommand(1);
  leaf(data, "gen-ar", "Generate associative-recall datasets", data_gen_ar, false);
  CLI::App* train = app.add_subcommand("train", "Training")->require_subcommand(1);
  leaf(train, "ar", "Train a model on associative recall", train_ar, false);
  CLI::App* eval = app.add_subcommand("eval", "Evaluation")->require_subcommand(1);
  leaf(eval, "ar", "Accuracy per kv split", eval_ar, true);
  CLI::App* probe = app.add_subcommand("probe", "Probes")->require_subcommand(1);
  leaf(probe, "perturb", "Leading and trailing corruption probe", probe_perturb, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "ssmctl: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  o.verbosity = quiet ? -1 : verbose;

  try {
    return action();
  } catch (const ConfigError& e) {
    std::cerr << "ssmctl: config error: " << e.what() << '\n';
    return 2;
  } catch (const ssm::ValidationError& e) {
    std::cerr << "ssmctl: invalid input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ssmctl: " << e.what() << '\n';
    return 1;
  }
}
