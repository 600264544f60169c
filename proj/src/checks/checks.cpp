#include "ssm/checks/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "ssm/analysis/influence.hpp"
#include "ssm/analysis/probe.hpp"
#include "ssm/analysis/smoothness.hpp"
#include "ssm/analysis/spectrum.hpp"
#include "ssm/core/scan.hpp"
#include "ssm/grad/layer.hpp"
#include "ssm/params/builders.hpp"
#include "ssm/params/init.hpp"

namespace ssm::checks {
namespace {

using Clock = std::chrono::steady_clock;

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Matrix normal_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = dist(rng);
  return m;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

CheckResult finish(CheckResult r, Clock::time_point start) {
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

double worst_state_diff(const LayerParams& params, const Matrix& x) {
  double worst = 0.0;
  for (const StepCoefficients& ch : build_coefficients(params, x)) {
    worst = std::max(worst, max_state_diff(scan_recurrent(ch), scan_parallel(ch)));
  }
  return worst;
}

}  // namespace

CheckResult parallel_form(std::size_t instances, std::uint64_t seed) {
  const auto start = Clock::now();
  double worst_real = 0.0, worst_complex = 0.0;
  std::size_t real_count = 0, complex_count = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    std::mt19937_64 rng(seed * 1000003 + i);
    const std::size_t T = pick(rng, 1, 128), N = pick(rng, 1, 32), D = pick(rng, 1, 3);
    const std::size_t kind = i % 8;
    if (kind == 7) {
      auto p = std::get<S4Params>(init_params(Variant::s4, N, D, seed + i));
      for (double& v : p.a_re.flat()) v = -uniform(rng, 0.01, 2.0);
      for (double& v : p.a_im.flat()) v = uniform(rng, -5.0, 5.0);
      p.b = normal_matrix(rng, D, N);
      p.c = normal_matrix(rng, D, N);
      for (double& v : p.delta.flat()) v = uniform(rng, 0.01, 1.0);
      worst_complex = std::max(worst_complex, worst_state_diff(p, normal_matrix(rng, T, D)));
      ++complex_count;
      continue;
    }
    const Variant v = all_variants[kind];
    const bool exp_family = v == Variant::s4 || v == Variant::mamba;
    const bool polarized = exp_family && (i / 8) % 2 == 1;
    grad::GradCheckCase c{v, seed * 1000003 + i, T, polarized ? std::max<std::size_t>(N, 3) : N, D,
                          polarized ? PolarizationConfig{true, true} : PolarizationConfig{}};
    const auto inst = grad::make_instance(c);
    worst_real = std::max(worst_real, worst_state_diff(inst.params, inst.x));
    ++real_count;
  }
  CheckResult r;
  r.id = 1;
  r.name = "parallel form";
  r.pass = worst_real < 1e-10 && worst_complex < 1e-8;
  r.summary = std::to_string(instances) + " instances, max |h_rec - h_par| real " + fmt(worst_real) +
              " (< 1e-10), complex " + fmt(worst_complex) + " (< 1e-8)";
  r.details = {{"instances", instances},     {"real_instances", real_count}, {"complex_instances", complex_count},
               {"worst_real", worst_real},   {"worst_complex", worst_complex}, {"tolerance_real", 1e-10},
               {"tolerance_complex", 1e-8}};
  return finish(r, start);
}

CheckResult gradients(std::size_t count) {
  const auto start = Clock::now();
  double worst = 0.0;
  std::size_t failed_rows = 0, rows = 0;
  nlohmann::json failures = nlohmann::json::array();
  for (std::uint64_t s = 1; s <= count; ++s) {
    std::mt19937_64 rng(s);
    const std::size_t T = pick(rng, 1, 64), N = pick(rng, 1, 8), D = pick(rng, 1, 4);
    grad::GradCheckCase c{all_variants[(s - 1) % 7], s, T, N, D, {}};
    const auto inst = grad::make_instance(c);
    for (const auto& row : grad::gradient_check(inst.params, inst.x, inst.cotangent, s)) {
      ++rows;
      worst = std::max(worst, row.max_rel_err);
      if (!row.pass) {
        ++failed_rows;
        failures.push_back({{"variant", row.variant}, {"seed", row.seed}, {"tensor", row.tensor},
                            {"max_rel_err", row.max_rel_err}});
      }
    }
  }
  CheckResult r;
  r.id = 2;
  r.name = "gradient correctness";
  r.pass = failed_rows == 0;
  r.summary = std::to_string(count) + " model/input pairs, worst relative error " + fmt(worst) + " (< " +
              fmt(grad::grad_tolerance) + "), " + std::to_string(failed_rows) + " failing tensors";
  r.details = {{"pairs", count}, {"tensor_rows", rows}, {"worst", worst}, {"failures", failures},
               {"tolerance", grad::grad_tolerance}, {"fd_step", grad::fd_step}};
  return finish(r, start);
}

CheckResult recency(std::uint64_t seed) {
  const auto start = Clock::now();
  std::mt19937_64 rng(seed);
  bool ok = true;

  // (a) scalar S4 with a constant gate.
  S4Params s4;
  s4.a_re = Matrix(1, 1, -0.5);
  s4.a_im = Matrix(1, 1, 0.0);
  s4.b = Matrix(1, 1, 0.8);
  s4.c = Matrix(1, 1, 1.3);
  s4.delta = Matrix(1, 1, 0.4);
  const std::size_t T = 64;
  const analysis::InfluenceMatrix im = analysis::influence_matrix(s4, normal_matrix(rng, T, 1));
  const double a = std::exp(0.4 * -0.5);
  double closed_form_err = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s <= t; ++s) {
      const double expected = std::abs(1.3 * std::pow(a, static_cast<double>(t - s)) * 0.4 * 0.8);
      closed_form_err = std::max(closed_form_err, std::abs(im.scores(t, s) - expected));
    }
  }
  const analysis::DecayFit scalar_fit = analysis::fit_decay_rate(im);
  const double kappa_err = std::abs(scalar_fit.kappa_hat + std::log(a));
  const bool a_ok = closed_form_err <= 1e-12 && kappa_err <= 1e-9 && scalar_fit.r_squared >= 1.0 - 1e-12;
  ok = ok && a_ok;

  // (b) Mamba at init and (c) linear attention, T = 256.
  nlohmann::json mamba = nlohmann::json::array(), la = nlohmann::json::array();
  bool b_ok = true, c_ok = true;
  double worst_margin = -std::numeric_limits<double>::infinity(), worst_la = 0.0;
  for (std::uint64_t k = 0; k < 3; ++k) {
    const LayerParams mp = init_params(Variant::mamba, 16, 4, seed + k);
    const analysis::InfluenceMatrix mm = analysis::influence_matrix(mp, normal_matrix(rng, 256, 4));
    const analysis::DecayFit mf = analysis::fit_decay_rate(mm);
    const double bound = std::log(mm.a_max) + 0.05;
    b_ok = b_ok && mf.defined && mf.slope <= bound;
    worst_margin = std::max(worst_margin, mf.slope - bound);
    mamba.push_back({{"seed", seed + k}, {"slope", mf.slope}, {"log_a_max", std::log(mm.a_max)}, {"bound", bound},
                     {"r_squared", mf.r_squared}, {"excluded_zeros", mf.excluded_zeros}});

    const LayerParams lp = init_params(Variant::la, 8, 4, seed + k);
    const analysis::DecayFit lf = analysis::fit_decay_rate(analysis::influence_matrix(lp, normal_matrix(rng, 256, 4)));
    c_ok = c_ok && lf.defined && std::abs(lf.kappa_hat) <= 0.01;
    worst_la = std::max(worst_la, std::abs(lf.kappa_hat));
    la.push_back({{"seed", seed + k}, {"kappa_hat", lf.kappa_hat}, {"r_squared", lf.r_squared}});
  }
  ok = ok && b_ok && c_ok;

  CheckResult r;
  r.id = 3;
  r.name = "recency";
  r.pass = ok;
  r.summary = "scalar S4 closed form err " + fmt(closed_form_err) + " (<= 1e-12), kappa err " + fmt(kappa_err) +
              ", R^2 " + fmt(scalar_fit.r_squared) + "; Mamba slope - (log a_max + 0.05) max " + fmt(worst_margin) +
              " (<= 0); LA |kappa| max " + fmt(worst_la) + " (<= 0.01)";
  r.details = {{"scalar", {{"closed_form_err", closed_form_err}, {"kappa_hat", scalar_fit.kappa_hat},
                           {"kappa_theory", -std::log(a)}, {"r_squared", scalar_fit.r_squared}, {"pass", a_ok}}},
               {"mamba", mamba},
               {"mamba_pass", b_ok},
               {"linear_attention", la},
               {"linear_attention_pass", c_ok}};
  return finish(r, start);
}

CheckResult oversmoothing(std::size_t instances, std::uint64_t seed) {
  const auto start = Clock::now();
  std::normal_distribution<double> gauss(0.0, 1.0);

  StepCoefficients hand;
  hand.push_back(Step{{Complex(0.5, 0.0)}, {1.0}, {1.0}, 0.5});
  hand.push_back(Step{{Complex(0.5, 0.0)}, {-1.0}, {1.0}, 0.5});
  const analysis::BoundReport hr = analysis::oversmoothing_check(hand);
  const bool hand_ok = hr.verdict && hr.satisfied && std::abs(hr.lhs - 0.75) < 1e-15 && std::abs(hr.rhs - 1.0) < 1e-15;

  struct Sweep {
    std::size_t violations = 0, missing_verdict = 0;
    double worst_excess = -std::numeric_limits<double>::infinity();
    nlohmann::json examples = nlohmann::json::array();
  };
  auto run = [&](bool equal) {
    Sweep sw;
    for (std::size_t i = 0; i < instances; ++i) {
      std::mt19937_64 rng(seed * 7919 + i + (equal ? 0 : 1u << 20));
      const std::size_t T = pick(rng, 2, 64), N = pick(rng, 1, 32);
      std::vector<Step> co(T);
      for (auto& st : co) {
        st.delta = uniform(rng, 0.0, 1.0);
        for (std::size_t n = 0; n < N; ++n) {
          st.a.emplace_back(equal ? 1.0 - st.delta : uniform(rng, 0.0, 1.0 - st.delta), 0.0);
          st.b.push_back(gauss(rng));
          st.c.push_back(gauss(rng));
        }
      }
      if (!equal) {
        // Resample each entry's b column until it changes sign.
        for (std::size_t n = 0; n < N; ++n) {
          auto straddles = [&] {
            double lo = co[0].b[n], hi = co[0].b[n];
            for (const auto& st : co) lo = std::min(lo, st.b[n]), hi = std::max(hi, st.b[n]);
            return lo <= 0.0 && hi >= 0.0;
          };
          while (!straddles()) {
            for (auto& st : co) st.b[n] = gauss(rng);
          }
        }
      }
      const analysis::BoundReport br = analysis::oversmoothing_check(StepCoefficients(std::move(co)));
      if (!br.verdict) {
        ++sw.missing_verdict;
        continue;
      }
      sw.worst_excess = std::max(sw.worst_excess, br.lhs - br.rhs);
      if (!br.satisfied) {
        ++sw.violations;
        if (sw.examples.size() < 5) {
          sw.examples.push_back({{"instance", i}, {"T", T}, {"N", N}, {"lhs", br.lhs}, {"rhs", br.rhs}});
        }
      }
    }
    return sw;
  };
  const Sweep eq = run(true);
  const Sweep bd = run(false);

  CheckResult r;
  r.id = 4;
  r.name = "over-smoothing bound";
  r.pass = hand_ok && eq.violations == 0 && bd.violations == 0 && eq.missing_verdict == 0 && bd.missing_verdict == 0;
  r.summary = "a+delta=1: " + std::to_string(eq.violations) + "/" + std::to_string(instances) +
              " violations; a+delta<=1 with straddling b: " + std::to_string(bd.violations) + "/" +
              std::to_string(instances) + " violations (slack 1e-12); hand instance lhs " + fmt(hr.lhs) + " rhs " +
              fmt(hr.rhs);
  auto sweep_json = [](const Sweep& s) {
    return nlohmann::json{{"violations", s.violations},
                          {"missing_verdict", s.missing_verdict},
                          {"max_lhs_minus_rhs", s.worst_excess},
                          {"examples", s.examples}};
  };
  r.details = {{"instances_per_condition", instances},
               {"condition_equal", sweep_json(eq)},
               {"condition_bounded", sweep_json(bd)},
               {"hand", {{"lhs", hr.lhs}, {"rhs", hr.rhs}, {"pass", hand_ok}}},
               {"slack", analysis::bound_slack}};
  return finish(r, start);
}

CheckResult low_pass(std::size_t instances, std::uint64_t seed) {
  const auto start = Clock::now();
  const std::vector<double> grid = analysis::log_grid();
  const std::vector<double> eps{0.1, 0.01};
  const std::vector<Complex> pole{Complex(-1.0, 0.0)};
  const std::vector<double> one{1.0};
  const analysis::FrequencyResponse single = analysis::frequency_response(pole, one, one, grid, eps);
  double single_err = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    single_err = std::max(single_err, std::abs(single.magnitude[i] - 1.0 / std::sqrt(1.0 + grid[i] * grid[i])));
  }

  std::size_t failures = 0, bound_failures = 0;
  double worst_ratio = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    std::mt19937_64 rng(seed * 104729 + i);
    const std::size_t N = pick(rng, 1, 16);
    std::vector<Complex> rates;
    std::vector<double> b, c;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t n = 0; n < N; ++n) {
      rates.emplace_back(-uniform(rng, 0.05, 5.0), uniform(rng, -10.0, 10.0));
      b.push_back(gauss(rng));
      c.push_back(gauss(rng));
    }
    const analysis::FrequencyResponse fr = analysis::frequency_response(rates, b, c, grid, eps);
    for (std::size_t e = 0; e < eps.size(); ++e) {
      if (!fr.below_eps[e]) ++failures;
      worst_ratio = std::max(worst_ratio, fr.at_cutoff[e] / eps[e]);
    }
    if (!fr.decay_bound_holds) ++bound_failures;
  }
  CheckResult r;
  r.id = 5;
  r.name = "low-pass";
  r.pass = single_err <= 1e-12 && failures == 0;
  r.summary = "single pole err " + fmt(single_err) + " (<= 1e-12); " + std::to_string(instances) +
              " complex S4 channels, max |Z(cutoff)|/eps " + fmt(worst_ratio) + " (<= 1), " +
              std::to_string(failures) + " failures";
  r.details = {{"single_pole_err", single_err},     {"instances", instances},
               {"epsilons", eps},                   {"failures", failures},
               {"max_ratio_at_cutoff", worst_ratio}, {"decay_bound_failures", bound_failures}};
  return finish(r, start);
}

CheckResult polarization(std::size_t instances, std::size_t steps, std::uint64_t seed) {
  const auto start = Clock::now();
  double worst_diff = 0.0, min_delta = std::numeric_limits<double>::infinity(), init_zero_term = 0.0;
  bool one_zero = true, negligible = true;
  for (std::size_t i = 0; i < instances; ++i) {
    std::mt19937_64 rng(seed * 15485863 + i);
    const std::size_t N = pick(rng, 3, 8), D = pick(rng, 1, 4), T = pick(rng, 4, 64);
    auto p = std::get<MambaParams>(init_params(Variant::mamba, N, D, seed + i, {true, true}));
    const Matrix x = normal_matrix(rng, T, D);
    const Matrix cot = normal_matrix(rng, T, D);
    init_zero_term = std::max(init_zero_term, grad::check_polarized_delta_gradient(p, x, cot).zero_channel_term);
    // Step sizes well above the 1/1000 scale of the zero channel.
    for (double& b : p.delta_bias.flat()) b = uniform(rng, 1.0, 3.0);
    for (double& w : p.w_delta.flat()) w *= 0.1;
    const grad::PolarizedDeltaReport rep = grad::check_polarized_delta_gradient(p, x, cot);
    worst_diff = std::max(worst_diff, rep.max_abs_diff);
    min_delta = std::min(min_delta, rep.min_delta);
    one_zero = one_zero && rep.one_channel_exact_zero;
    negligible = negligible && rep.zero_channel_negligible;
  }

  // Rates through optimizer steps.
  tasks::ModelConfig mc;
  mc.vocab_size = 16;
  mc.width = 8;
  mc.state_dim = 4;
  mc.polarization = {true, true};
  mc.seed = seed;
  tasks::TinyModel model = tasks::init_model(mc);
  tasks::ARConfig ac;
  ac.vocab_size = 16;
  ac.lengths = {16, 24};
  ac.kv_fractions = {0.25, 0.5};
  ac.examples_per_cell = 16;
  ac.eval_length = 32;
  ac.eval_kv_pairs = {4};
  ac.seed = seed;
  const tasks::ARDataset data = tasks::generate_ar_dataset(ac);
  tasks::TrainConfig tc;
  tc.learning_rate = 1e-2;
  tasks::AdamOptimizer opt(model, tc);
  const Matrix a_before = std::get<MambaParams>(model.blocks[0].mixer).a_diag;
  bool frozen = true;
  std::vector<std::size_t> idx(8);
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = (k * idx.size() + j) % data.examples.size();
    opt.step(tasks::batch_gradient(model, data, idx).grads);
    for (const tasks::Block& b : model.blocks) {
      const auto& m = std::get<MambaParams>(b.mixer);
      for (std::size_t d = 0; d < m.channels(); ++d) {
        const std::vector<double> rates = m.effective_a(d);
        frozen = frozen && rates.front() == 0.0 && rates.back() == zero_channel_rate;
      }
    }
  }
  const bool free_moved = std::get<MambaParams>(model.blocks[0].mixer).a_diag != a_before;

  CheckResult r;
  r.id = 6;
  r.name = "polarization";
  r.pass = worst_diff <= 1e-10 && one_zero && frozen && free_moved;
  r.summary = std::to_string(instances) + " instances, |grad - free-channel grad| max " + fmt(worst_diff) +
              " (<= 1e-10, min delta " + fmt(min_delta) + "); rates " + (frozen ? "bitwise fixed" : "CHANGED") +
              " through " + std::to_string(steps) + " steps";
  r.details = {{"instances", instances},
               {"max_abs_diff", worst_diff},
               {"min_delta", min_delta},
               {"one_channel_exact_zero", one_zero},
               {"zero_channel_negligible", negligible},
               {"zero_channel_term_at_init_delta", init_zero_term},
               {"optimizer_steps", steps},
               {"rates_frozen", frozen},
               {"free_rates_moved", free_moved}};
  return finish(r, start);
}

CheckResult smoothness_dynamics(std::size_t inputs, std::uint64_t seed) {
  const auto start = Clock::now();
  constexpr std::size_t depth = 8, T = 64, D = 8, N = 4;
  const analysis::SmoothingStack stack = analysis::random_smoothing_stack(depth, N, D, seed);
  std::size_t bound_violations = 0, missing_conditions = 0, decreasing = 0;
  std::vector<double> mean_block(depth, 0.0), mean_states(depth, 0.0);
  for (std::size_t i = 0; i < inputs; ++i) {
    std::mt19937_64 rng(seed * 32452843 + i);
    const auto layers = analysis::layerwise_smoothness(stack, normal_matrix(rng, T, D));
    for (const auto& l : layers) {
      if (!l.conditions_hold) ++missing_conditions;
      if (!l.bound_satisfied) ++bound_violations;
      mean_block[l.layer] += l.block.epsilon / static_cast<double>(inputs);
      mean_states[l.layer] += l.states.epsilon / static_cast<double>(inputs);
    }
    if (layers.back().block.epsilon <= layers.front().block.epsilon) ++decreasing;
  }
  const double share = static_cast<double>(decreasing) / static_cast<double>(inputs);
  CheckResult r;
  r.id = 8;
  r.name = "smoothness dynamics";
  r.pass = bound_violations == 0 && missing_conditions == 0 && share >= 0.9;
  std::string trace;
  for (double e : mean_block) trace += (trace.empty() ? "" : " ") + fmt(e);
  r.summary = "bound violations " + std::to_string(bound_violations) + "/" + std::to_string(inputs * depth) +
              " layer runs; last <= first block epsilon on " + fmt(100.0 * share) +
              "% of inputs (>= 90%); mean block epsilon by depth: " + trace;
  r.details = {{"inputs", inputs},
               {"depth", depth},
               {"steps", T},
               {"channels", D},
               {"state_dim", N},
               {"mixer", "rwkv"},
               {"bound_violations", bound_violations},
               {"layers_without_condition", missing_conditions},
               {"share_last_le_first", share},
               {"mean_block_epsilon", mean_block},
               {"mean_state_epsilon", mean_states}};
  return finish(r, start);
}

CheckResult gate_gap(std::uint64_t seed) {
  const auto start = Clock::now();
  std::mt19937_64 rng(seed);
  const std::size_t D = 16, N = 8;
  nlohmann::json models = nlohmann::json::array();
  bool exact = true;
  for (bool polarized : {false, true}) {
    const LayerParams p =
        init_params(Variant::mamba, N, D, seed, polarized ? PolarizationConfig{true, true} : PolarizationConfig{});
    std::vector<Matrix> xs;
    for (int k = 0; k < 4; ++k) xs.push_back(normal_matrix(rng, 64, D));
    const analysis::GateGapHistogram h = analysis::gate_gap_histogram(p, xs);

    std::vector<double> hi(D * N, -std::numeric_limits<double>::infinity());
    std::vector<double> lo(D * N, std::numeric_limits<double>::infinity());
    for (const Matrix& x : xs) {
      const ChannelCoefficients cc = build_coefficients(p, x);
      for (std::size_t d = 0; d < D; ++d) {
        for (const Step& st : cc[d].all()) {
          for (std::size_t n = 0; n < N; ++n) {
            hi[d * N + n] = std::max(hi[d * N + n], std::abs(st.a[n]));
            lo[d * N + n] = std::min(lo[d * N + n], std::abs(st.a[n]));
          }
        }
      }
    }
    std::vector<double> gaps(D * N);
    for (std::size_t i = 0; i < gaps.size(); ++i) gaps[i] = hi[i] - lo[i];
    bool same = gaps == h.gaps && h.edges.size() == 11;
    for (std::size_t k = 0; same && k < h.edges.size(); ++k) {
      const double share =
          static_cast<double>(std::count_if(gaps.begin(), gaps.end(), [&](double g) { return g <= h.edges[k]; })) /
          static_cast<double>(gaps.size());
      same = same && share == h.cumulative[k] && std::abs(h.edges[k] - static_cast<double>(k) / 10.0) < 1e-15;
    }
    exact = exact && same;
    models.push_back({{"polarized", polarized}, {"exact", same}, {"share_below_half", h.share_below_half},
                      {"cumulative", h.cumulative}});
  }
  CheckResult r;
  r.id = 9;
  r.name = "gate-gap histogram";
  r.pass = exact;
  r.summary = std::string("histogram ") + (exact ? "matches" : "DIFFERS FROM") +
              " the brute-force max/min scan; share of gaps < 0.5 (reported only): " +
              fmt(models[0]["share_below_half"].get<double>()) + " untrained, " +
              fmt(models[1]["share_below_half"].get<double>()) + " untrained polarized";
  r.details = {{"models", models}};
  return finish(r, start);
}

std::vector<ARVariant> ar_variants() {
  return {{"default-2L", 2, {}}, {"one-polarized-2L", 2, {true, false}}, {"both-polarized-4L", 4, {true, true}}};
}

ARExperiment default_ar_experiment() {
  // Desk scale: about 20k training sequences, six epochs of batch 32.
  ARExperiment e;
  e.train.epochs = 6;
  e.train.batch_size = 32;
  e.train.learning_rate = 3e-3;
  e.train.clip_norm = 1.0;
  return e;
}

nlohmann::json to_json(const ARExperiment& e) {
  return {{"data", tasks::to_json(e.data)}, {"train", tasks::to_json(e.train)}, {"width", e.width},
          {"state_dim", e.state_dim},     {"seeds", e.seeds},                {"cache_dir", e.cache_dir},
          {"probe_k", e.probe_k},         {"threads", e.threads}};
}

ARExperiment ar_experiment_from_json(const nlohmann::json& j) {
  ARExperiment e;
  if (j.contains("data")) e.data = tasks::ar_config_from_json(j.at("data"));
  if (j.contains("train")) e.train = tasks::train_config_from_json(j.at("train"));
  e.width = j.value("width", e.width);
  e.state_dim = j.value("state_dim", e.state_dim);
  e.seeds = j.value("seeds", e.seeds);
  e.cache_dir = j.value("cache_dir", e.cache_dir);
  e.probe_k = j.value("probe_k", e.probe_k);
  e.threads = j.value("threads", e.threads);
  return e;
}

ARRun run_ar(const ARExperiment& e, const ARVariant& variant, std::uint64_t seed) {
  const auto start = Clock::now();
  tasks::ARConfig data_cfg = e.data;
  data_cfg.seed = seed;
  tasks::ModelConfig mc;
  mc.vocab_size = data_cfg.vocab_size;
  mc.width = e.width;
  mc.state_dim = e.state_dim;
  mc.layers = variant.layers;
  mc.mixer = Variant::mamba;
  mc.polarization = variant.polarization;
  mc.seed = seed;
  tasks::TrainConfig tc = e.train;
  tc.seed = seed;
  tc.threads = e.threads;
  nlohmann::json train_key = tasks::to_json(tc);
  train_key.erase("threads");
  const nlohmann::json key = {{"data", tasks::to_json(data_cfg)}, {"model", tasks::to_json(mc)}, {"train", train_key}};

  ARRun run;
  run.label = variant.label;
  run.seed = seed;
  const std::vector<tasks::ARDataset> evals = tasks::generate_ar_eval_sets(data_cfg);
  std::filesystem::path ckpt, report;
  if (!e.cache_dir.empty()) {
    std::filesystem::create_directories(e.cache_dir);
    const std::string stem = variant.label + "-s" + std::to_string(seed);
    ckpt = std::filesystem::path(e.cache_dir) / (stem + ".ckpt");
    report = std::filesystem::path(e.cache_dir) / (stem + ".json");
    run.checkpoint = ckpt.string();
    if (std::filesystem::exists(ckpt) && std::filesystem::exists(report)) {
      std::ifstream in(report);
      const nlohmann::json cached = nlohmann::json::parse(in, nullptr, false);
      if (!cached.is_discarded() && cached.value("key", nlohmann::json()) == key) {
        run.model = tasks::load_checkpoint(ckpt.string());
        run.eval = tasks::evaluate_ar_sets(run.model, evals, e.threads);
        for (const auto& h : cached.at("history")) {
          run.history.push_back({h.at("epoch"), h.at("split"), h.at("loss"), h.at("accuracy")});
        }
        run.seconds = cached.value("train_seconds", 0.0);
        run.cached = true;
        return run;
      }
    }
  }

  run.model = tasks::init_model(mc);
  const tasks::ARDataset train = tasks::generate_ar_dataset(data_cfg);
  const tasks::TrainResult tr =
      tasks::train_ar(run.model, train, evals, tc, [&](const std::vector<tasks::EpochRecord>& recs) {
        if (!e.verbose) return;
        std::cerr << "  [" << variant.label << " seed " << seed << "] epoch " << recs.front().epoch;
        for (const auto& r : recs) std::cerr << ' ' << r.split << ' ' << fmt(r.accuracy);
        std::cerr << " (" << fmt(std::chrono::duration<double>(Clock::now() - start).count()) << " s)\n";
      });
  run.history = tr.history;
  run.eval = tr.final_eval;
  if (tc.epochs == 0) run.eval = tasks::evaluate_ar_sets(run.model, evals, e.threads);
  run.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (!e.cache_dir.empty()) {
    tasks::save_checkpoint(ckpt.string(), run.model);
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : run.history) {
      hist.push_back({{"epoch", h.epoch}, {"split", h.split}, {"loss", h.loss}, {"accuracy", h.accuracy}});
    }
    std::ofstream out(report);
    out << nlohmann::json{{"key", key}, {"eval", tasks::to_json(run.eval)}, {"history", hist},
                          {"train_seconds", run.seconds}}
               .dump(2)
        << '\n';
  }
  return run;
}

CheckResult ar_ordering(const ARExperiment& e) {
  const auto start = Clock::now();
  const auto variants = ar_variants();
  const std::size_t hard = e.data.eval_kv_pairs.size() - 1;
  std::vector<double> mean_avg(variants.size(), 0.0), mean_hard(variants.size(), 0.0);
  nlohmann::json runs = nlohmann::json::array();
  double max_seconds = 0.0;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (std::uint64_t seed : e.seeds) {
      const ARRun run = run_ar(e, variants[v], seed);
      mean_avg[v] += run.eval.mean_accuracy / static_cast<double>(e.seeds.size());
      mean_hard[v] += run.eval.splits.at(hard).accuracy / static_cast<double>(e.seeds.size());
      max_seconds = std::max(max_seconds, run.seconds);
      nlohmann::json splits = nlohmann::json::object();
      for (const auto& s : run.eval.splits) splits[s.split] = s.accuracy;
      runs.push_back({{"label", run.label}, {"seed", seed}, {"avg", run.eval.mean_accuracy}, {"splits", splits},
                      {"train_seconds", run.seconds}, {"cached", run.cached}});
    }
  }
  const bool order = mean_avg[2] > mean_avg[1] && mean_avg[1] > mean_avg[0];
  const double lead = mean_hard[2] - mean_hard[0];
  CheckResult r;
  r.id = 7;
  r.name = "AR ordering";
  r.pass = e.seeds.size() >= 3 && order && lead >= 0.05;
  r.summary = "mean avg accuracy default-2L " + fmt(100 * mean_avg[0]) + ", one-polarized-2L " +
              fmt(100 * mean_avg[1]) + ", both-polarized-4L " + fmt(100 * mean_avg[2]) + " (need increasing); kv" +
              std::to_string(e.data.eval_kv_pairs[hard]) + " lead " + fmt(100 * lead) + " points (>= 5); " +
              std::to_string(e.seeds.size()) + " seeds";
  nlohmann::json means = nlohmann::json::object();
  for (std::size_t v = 0; v < variants.size(); ++v) {
    means[variants[v].label] = {{"avg", mean_avg[v]}, {"hardest_split", mean_hard[v]}};
  }
  r.details = {{"experiment", to_json(e)}, {"means", means}, {"runs", runs}, {"ordering_holds", order},
               {"hardest_split_lead", lead}, {"max_train_seconds", max_seconds}};
  return finish(r, start);
}

CheckResult perturbation_direction(const ARExperiment& e) {
  const auto start = Clock::now();
  const ARVariant variant = ar_variants().front();
  bool all = e.seeds.size() >= 3;
  nlohmann::json rows = nlohmann::json::array();
  std::string trace;
  for (std::uint64_t seed : e.seeds) {
    const ARRun run = run_ar(e, variant, seed);
    tasks::ARConfig data_cfg = e.data;
    data_cfg.seed = seed;
    const std::vector<tasks::ARDataset> evals = tasks::generate_ar_eval_sets(data_cfg);
    const analysis::PerturbationReport lead =
        analysis::perturbation_probe(run.model, evals.front(), analysis::Region::leading, e.probe_k, seed, e.threads);
    const analysis::PerturbationReport trail =
        analysis::perturbation_probe(run.model, evals.front(), analysis::Region::trailing, e.probe_k, seed, e.threads);
    const bool ok = trail.drop > lead.drop;
    all = all && ok;
    rows.push_back({{"seed", seed}, {"leading", analysis::to_json(lead)}, {"trailing", analysis::to_json(trail)},
                    {"trailing_exceeds_leading", ok}});
    trace += (trace.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " leading " +
             fmt(100 * lead.drop) + " trailing " + fmt(100 * trail.drop);
  }
  CheckResult r;
  r.id = 10;
  r.name = "perturbation probe";
  r.pass = all;
  r.summary = "accuracy drop (points) with k = " + std::to_string(e.probe_k) + " on kv" +
              std::to_string(e.data.eval_kv_pairs.front()) + ": " + trace + " (need trailing > leading every seed)";
  r.details = {{"k", e.probe_k}, {"split_kv_pairs", e.data.eval_kv_pairs.front()}, {"seeds", rows}};
  return finish(r, start);
}

}  // namespace ssm::checks
