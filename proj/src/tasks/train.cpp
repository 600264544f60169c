#include "ssm/tasks/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "ssm/core/numeric.hpp"
#include "ssm/grad/ops.hpp"

namespace ssm::tasks {
namespace {

// Positions after the last masked one cannot influence the loss of a causal
// model, so examples are cut there.
std::size_t effective_length(const ARExample& ex) {
  for (std::size_t t = ex.mask.size(); t > 0; --t) {
    if (ex.mask[t - 1]) return t;
  }
  return 0;
}

struct ExampleStats {
  double loss_sum = 0.0;
  std::size_t masked = 0;
  std::size_t correct = 0;
};

std::size_t count_correct(std::span<const double> logits, std::size_t V, const ARExample& ex, std::size_t T) {
  std::size_t hits = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (ex.mask[t] && argmax(logits.subspan(t * V, V)) == ex.target[t]) ++hits;
  }
  return hits;
}

// Runs job(i) for i in [0, count) on up to `threads` workers.
template <class F>
void parallel_for(std::size_t count, std::size_t threads, F&& job) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count && !failed; i = next++) {
        try {
          job(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

bool all_finite(const std::vector<Matrix>& grads) {
  for (const auto& g : grads) {
    for (double v : g.flat()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

double theta_of(double v, Constraint c) {
  switch (c) {
    case Constraint::negative_exp: return std::log(-v);
    case Constraint::positive_exp: return std::log(std::max(v, std::numeric_limits<double>::min()));
    case Constraint::unit_sigmoid: {
      const double p = std::clamp(v, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
      return std::log(p) - std::log1p(-p);
    }
    case Constraint::none: break;
  }
  return v;
}

double value_of(double theta, Constraint c) {
  switch (c) {
    case Constraint::negative_exp: return -std::exp(std::clamp(theta, -700.0, 700.0));
    case Constraint::positive_exp: return std::exp(std::min(theta, 700.0));
    case Constraint::unit_sigmoid:
      return std::clamp(ssm::sigmoid(theta), std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
    case Constraint::none: break;
  }
  return theta;
}

// d value / d theta at the current value.
double jacobian(double v, Constraint c) {
  switch (c) {
    case Constraint::negative_exp:
    case Constraint::positive_exp: return v;
    case Constraint::unit_sigmoid: return v * (1.0 - v);
    case Constraint::none: break;
  }
  return 1.0;
}

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ValidationError("batch size must be at least 1");
  if (cfg.chunk == 0) throw ValidationError("chunk must be at least 1");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ValidationError("learning rate must be finite and non-negative");
  }
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ValidationError("Adam betas must lie in [0, 1)");
  }
  if (!(cfg.adam_eps > 0.0)) throw ValidationError("Adam epsilon must be positive");
  if (!(cfg.clip_norm >= 0.0)) throw ValidationError("clip norm must be non-negative");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},       {"batch_size", cfg.batch_size}, {"learning_rate", cfg.learning_rate},
          {"beta1", cfg.beta1},         {"beta2", cfg.beta2},           {"adam_eps", cfg.adam_eps},
          {"clip_norm", cfg.clip_norm}, {"seed", cfg.seed},             {"threads", cfg.threads},
          {"chunk", cfg.chunk}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.chunk = j.value("chunk", c.chunk);
  return c;
}

DivergenceError::DivergenceError(std::size_t epoch, std::size_t step, const std::string& what)
    : std::runtime_error("training diverged in epoch " + std::to_string(epoch) + " at step " + std::to_string(step) +
                         ": " + what),
      epoch_(epoch) {}

BatchGradient batch_gradient(const TinyModel& model, const ARDataset& data, std::span<const std::size_t> indices,
                             std::size_t threads, std::size_t chunk) {
  if (chunk == 0) throw ValidationError("chunk must be at least 1");
  if (data.vocab_size > model.config.vocab_size) throw ValidationError("dataset vocabulary exceeds the model's");
  const std::size_t V = model.config.vocab_size;
  const std::size_t chunks = (indices.size() + chunk - 1) / chunk;

  std::vector<Matrix> shapes = zero_gradients(model);
  std::vector<std::vector<Matrix>> partial(chunks);
  std::vector<ExampleStats> stats(chunks);

  parallel_for(chunks, threads, [&](std::size_t k) {
    std::vector<Matrix> acc = shapes;
    ExampleStats st;
    const std::size_t end = std::min(indices.size(), (k + 1) * chunk);
    for (std::size_t i = k * chunk; i < end; ++i) {
      if (indices[i] >= data.examples.size()) throw ValidationError("example index out of range");
      const ARExample& ex = data.examples[indices[i]];
      const std::size_t T = effective_length(ex);
      if (T == 0) continue;
      grad::Tape tape;
      const ModelGraph g = record_model(tape, model, std::span(ex.input).first(T), true);
      const grad::Var loss = grad::masked_cross_entropy(tape, g.logits, std::span(ex.target).first(T),
                                                        std::span(ex.mask).first(T), 1.0);
      const double one = 1.0;
      tape.backward(loss, std::span(&one, 1));
      st.loss_sum += tape.value(loss)[0];
      st.masked += ex.masked();
      st.correct += count_correct(tape.value(g.logits), V, ex, T);
      for (std::size_t p = 0; p < acc.size(); ++p) {
        const std::vector<double> gp = tape.grad(g.leaves[p]);
        auto dst = acc[p].flat();
        for (std::size_t e = 0; e < gp.size(); ++e) dst[e] += gp[e];
      }
    }
    partial[k] = std::move(acc);
    stats[k] = st;
  });

  BatchGradient out;
  out.grads = std::move(shapes);
  double loss_sum = 0.0;
  for (std::size_t k = 0; k < chunks; ++k) {
    loss_sum += stats[k].loss_sum;
    out.masked += stats[k].masked;
    out.correct += stats[k].correct;
    for (std::size_t p = 0; p < out.grads.size(); ++p) {
      auto dst = out.grads[p].flat();
      const auto src = partial[k][p].flat();
      for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
    }
  }
  if (out.masked == 0) throw ValidationError("batch has no masked position");
  const double inv = 1.0 / static_cast<double>(out.masked);
  out.loss = loss_sum * inv;
  for (auto& g : out.grads) {
    for (double& v : g.flat()) v *= inv;
  }
  return out;
}

AdamOptimizer::AdamOptimizer(TinyModel& model, const TrainConfig& cfg) : params_(parameters(model)), cfg_(cfg) {
  validate_train_config(cfg);
  for (const ParamRef& p : params_) {
    std::vector<double> th(p.value->size());
    for (std::size_t e = 0; e < th.size(); ++e) th[e] = theta_of(p.value->flat()[e], p.constraint);
    theta_.push_back(std::move(th));
    m_.emplace_back(p.value->size(), 0.0);
    v_.emplace_back(p.value->size(), 0.0);
  }
}

double AdamOptimizer::step(const std::vector<Matrix>& grads) {
  if (grads.size() != params_.size()) throw ValidationError("gradient list does not match the parameters");
  std::vector<std::vector<double>> g(params_.size());
  double sq = 0.0;
  for (std::size_t p = 0; p < params_.size(); ++p) {
    const auto values = params_[p].value->flat();
    const auto src = grads[p].flat();
    if (src.size() != values.size()) throw ValidationError("gradient shape mismatch for " + params_[p].name);
    g[p].resize(src.size());
    for (std::size_t e = 0; e < src.size(); ++e) {
      g[p][e] = src[e] * jacobian(values[e], params_[p].constraint);
      sq += g[p][e] * g[p][e];
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;

  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto values = params_[p].value->flat();
    for (std::size_t e = 0; e < values.size(); ++e) {
      const double ge = g[p][e] * clip;
      m_[p][e] = cfg_.beta1 * m_[p][e] + (1.0 - cfg_.beta1) * ge;
      v_[p][e] = cfg_.beta2 * v_[p][e] + (1.0 - cfg_.beta2) * ge * ge;
      const double delta = cfg_.learning_rate * (m_[p][e] / c1) / (std::sqrt(v_[p][e] / c2) + cfg_.adam_eps);
      if (delta == 0.0) continue;
      theta_[p][e] -= delta;
      values[e] = value_of(theta_[p][e], params_[p].constraint);
    }
  }
  return norm;
}

SplitMetrics evaluate_ar(const TinyModel& model, const ARDataset& data, std::size_t threads) {
  const std::size_t V = model.config.vocab_size;
  if (data.vocab_size > V) throw ValidationError("dataset vocabulary exceeds the model's");
  std::vector<ExampleStats> stats(data.examples.size());
  parallel_for(data.examples.size(), threads, [&](std::size_t i) {
    const ARExample& ex = data.examples[i];
    const std::size_t T = effective_length(ex);
    if (T == 0) return;
    const Matrix logits = forward_model(model, std::span(ex.input).first(T));
    ExampleStats st;
    st.masked = ex.masked();
    st.loss_sum = masked_cross_entropy(logits, std::span(ex.target).first(T), std::span(ex.mask).first(T)) *
                  static_cast<double>(st.masked);
    st.correct = count_correct(logits.flat(), V, ex, T);
    stats[i] = st;
  });
  SplitMetrics m;
  double loss_sum = 0.0;
  for (const auto& st : stats) {
    loss_sum += st.loss_sum;
    m.masked += st.masked;
    m.correct += st.correct;
  }
  if (m.masked == 0) throw ValidationError("evaluation set has no masked position");
  m.loss = loss_sum / static_cast<double>(m.masked);
  m.accuracy = static_cast<double>(m.correct) / static_cast<double>(m.masked);
  if (!data.examples.empty()) m.kv_pairs = data.examples.front().kv_pairs;
  return m;
}

EvalReport evaluate_ar_sets(const TinyModel& model, std::span<const ARDataset> sets, std::size_t threads) {
  EvalReport r;
  double sum = 0.0;
  for (const ARDataset& s : sets) {
    SplitMetrics m = evaluate_ar(model, s, threads);
    m.split = "kv" + std::to_string(m.kv_pairs);
    sum += m.accuracy;
    r.splits.push_back(std::move(m));
  }
  if (!sets.empty()) r.mean_accuracy = sum / static_cast<double>(sets.size());
  return r;
}

TrainResult train_ar(TinyModel& model, const ARDataset& train, std::span<const ARDataset> eval_sets,
                     const TrainConfig& cfg, const EpochCallback& on_epoch) {
  validate_train_config(cfg);
  validate_model(model);
  if (train.examples.empty()) throw ValidationError("training set is empty");
  AdamOptimizer opt(model, cfg);
  TrainResult result;
  std::vector<std::size_t> order(train.examples.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t masked = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      BatchGradient bg;
      try {
        bg = batch_gradient(model, train, std::span(order).subspan(start, end - start), cfg.threads, cfg.chunk);
      } catch (const grad::NonFiniteError& e) {
        throw DivergenceError(epoch, opt.steps() + 1, e.what());
      }
      if (!std::isfinite(bg.loss)) throw DivergenceError(epoch, opt.steps() + 1, "loss is not finite");
      if (!all_finite(bg.grads)) throw DivergenceError(epoch, opt.steps() + 1, "gradient is not finite");
      opt.step(bg.grads);
      loss_sum += bg.loss * static_cast<double>(bg.masked);
      masked += bg.masked;
      correct += bg.correct;
    }
    std::vector<EpochRecord> records;
    records.push_back({epoch, "train", loss_sum / static_cast<double>(masked),
                       static_cast<double>(correct) / static_cast<double>(masked)});
    if (!eval_sets.empty()) {
      result.final_eval = evaluate_ar_sets(model, eval_sets, cfg.threads);
      for (const auto& s : result.final_eval.splits) records.push_back({epoch, s.split, s.loss, s.accuracy});
    }
    result.history.insert(result.history.end(), records.begin(), records.end());
    if (on_epoch) on_epoch(records);
  }
  result.steps = opt.steps();
  return result;
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  out << "epoch,split,loss,accuracy\n";
  for (const auto& r : history) out << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.accuracy << '\n';
  out.precision(old);
}

nlohmann::json to_json(const SplitMetrics& m) {
  return {{"split", m.split},   {"kv_pairs", m.kv_pairs}, {"loss", m.loss},
          {"accuracy", m.accuracy}, {"masked", m.masked},     {"correct", m.correct}};
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json splits = nlohmann::json::array();
  for (const auto& s : r.splits) splits.push_back(to_json(s));
  return {{"splits", splits}, {"mean_accuracy", r.mean_accuracy}};
}

}  // namespace ssm::tasks
