#include "ssm/tasks/model.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <type_traits>

#include "ssm/core/serialize.hpp"
#include "ssm/grad/layer.hpp"
#include "ssm/grad/ops.hpp"
#include "ssm/params/init.hpp"
#include "ssm/params/io.hpp"

namespace ssm::tasks {
namespace {

Matrix normal(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = dist(rng);
  return m;
}

Constraint mixer_constraint(Variant v, std::string_view name) {
  if (v == Variant::s4 && name == "a_re") return Constraint::negative_exp;
  if (v == Variant::s4 && name == "delta") return Constraint::unit_sigmoid;
  if (v == Variant::mamba && name == "a_diag") return Constraint::negative_exp;
  if (v == Variant::retnet && name == "gamma") return Constraint::unit_sigmoid;
  if (v == Variant::rwkv && name == "w_decay") return Constraint::positive_exp;
  return Constraint::none;
}

// Visits every trainable tensor in parameter order as
// (name, tensor, constraint, mixer tensor name or empty).
template <class M, class F>
void visit_parameters(M& model, F&& f) {
  f(std::string("embedding"), model.embedding, Constraint::none, std::string_view{});
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    auto& b = model.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    f(p + "norm_gain", b.norm_gain, Constraint::none, std::string_view{});
    if (!b.conv_w.empty()) {
      f(p + "conv_w", b.conv_w, Constraint::none, std::string_view{});
      f(p + "conv_b", b.conv_b, Constraint::none, std::string_view{});
    }
    const Variant v = variant_of(b.mixer);
    for_each_tensor(b.mixer, [&](std::string_view name, auto& m, bool trainable) {
      if (trainable) f(p + "mixer." + std::string(name), m, mixer_constraint(v, name), name);
    });
    f(p + "gate_w", b.gate_w, Constraint::none, std::string_view{});
    f(p + "gate_b", b.gate_b, Constraint::none, std::string_view{});
    f(p + "out_w", b.out_w, Constraint::none, std::string_view{});
  }
  f(std::string("final_gain"), model.final_gain, Constraint::none, std::string_view{});
  f(std::string("classifier"), model.classifier, Constraint::none, std::string_view{});
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
  require(m.rows() == rows && m.cols() == cols,
          name + " must be " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
              std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  for (double v : m.flat()) require(std::isfinite(v), name + " has a non-finite entry");
}

void write_matrix(io::BinaryWriter& w, const Matrix& m) {
  w.u64(m.rows());
  w.u64(m.cols());
  for (double v : m.flat()) w.f64(v);
}

Matrix read_matrix(io::BinaryReader& r) {
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (rows > (std::uint64_t{1} << 28) || cols > (std::uint64_t{1} << 28)) throw io::FormatError("tensor too large");
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = r.f64();
  return m;
}

}  // namespace

TinyModel init_model(const ModelConfig& cfg) {
  require(cfg.vocab_size >= 2, "vocabulary needs at least two tokens");
  require(cfg.width >= 1 && cfg.layers >= 1, "model needs width >= 1 and at least one layer");
  require(!cfg.conv || cfg.conv_kernel >= 1, "conv kernel must be at least 1");
  const std::size_t V = cfg.vocab_size;
  const std::size_t D = cfg.width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  std::mt19937_64 rng(cfg.seed);

  TinyModel m;
  m.config = cfg;
  m.embedding = normal(rng, V, D, 1.0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    Block b;
    b.norm_gain = Matrix(D, 1, 1.0);
    if (cfg.conv) {
      b.conv_w = normal(rng, D, cfg.conv_kernel, 1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel)));
      b.conv_b = Matrix(D, 1);
    }
    b.mixer = init_params(cfg.mixer, cfg.state_dim + cfg.polarization.extra_channels(), D, cfg.seed * 1000003 + l + 1,
                          cfg.polarization);
    b.gate_w = normal(rng, D, D, scale);
    b.gate_b = Matrix(D, 1);
    b.out_w = normal(rng, D, D, scale);
    m.blocks.push_back(std::move(b));
  }
  m.final_gain = Matrix(D, 1, 1.0);
  m.classifier = normal(rng, V, D, scale);
  return m;
}

void validate_model(const TinyModel& model) {
  const ModelConfig& cfg = model.config;
  const std::size_t V = cfg.vocab_size;
  const std::size_t D = cfg.width;
  require(V >= 2 && D >= 1, "model needs a vocabulary of at least two tokens and width >= 1");
  require(model.blocks.size() == cfg.layers && cfg.layers >= 1, "block count does not match the config");
  require_shape(model.embedding, V, D, "embedding");
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const Block& b = model.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    require_shape(b.norm_gain, D, 1, p + "norm_gain");
    if (cfg.conv) {
      require_shape(b.conv_w, D, cfg.conv_kernel, p + "conv_w");
      require_shape(b.conv_b, D, 1, p + "conv_b");
    } else {
      require(b.conv_w.empty() && b.conv_b.empty(), p + "conv tensors present with conv disabled");
    }
    validate_params(b.mixer);
    require(variant_of(b.mixer) == cfg.mixer, p + "mixer variant does not match the config");
    require(channels_of(b.mixer) == D, p + "mixer width does not match the model width");
    require(polarization_of(b.mixer) == cfg.polarization, p + "mixer polarization does not match the config");
    if (cfg.mixer != Variant::griffin) {
      require(state_dim_of(b.mixer) == cfg.state_dim + cfg.polarization.extra_channels(),
              p + "mixer state size does not match the config");
    }
    require_shape(b.gate_w, D, D, p + "gate_w");
    require_shape(b.gate_b, D, 1, p + "gate_b");
    require_shape(b.out_w, D, D, p + "out_w");
  }
  require_shape(model.final_gain, D, 1, "final_gain");
  require_shape(model.classifier, V, D, "classifier");
}

std::vector<ParamRef> parameters(TinyModel& model) {
  std::vector<ParamRef> out;
  visit_parameters(model, [&](std::string name, Matrix& m, Constraint c, std::string_view) {
    out.push_back({std::move(name), &m, c});
  });
  return out;
}

std::size_t parameter_count(const TinyModel& model) {
  std::size_t n = 0;
  visit_parameters(model, [&](const std::string&, const Matrix& m, Constraint, std::string_view) { n += m.size(); });
  return n;
}

std::vector<Matrix> zero_gradients(const TinyModel& model) {
  std::vector<Matrix> out;
  visit_parameters(model, [&](const std::string&, const Matrix& m, Constraint, std::string_view) {
    out.emplace_back(m.rows(), m.cols());
  });
  return out;
}

ModelGraph record_model(grad::Tape& tape, const TinyModel& model, std::span<const TokenId> ids, bool need_grad) {
  require(!ids.empty(), "token sequence is empty");
  for (TokenId id : ids) {
    require(id < model.config.vocab_size, "token id " + std::to_string(id) + " outside the vocabulary");
  }
  ModelGraph g;
  auto leaf = [&](const std::string& name, const Matrix& m) {
    const grad::Var v = tape.leaf(name, {m.rows(), m.cols()}, m.values(), need_grad);
    if (need_grad) g.leaves.push_back(v);
    return v;
  };

  const grad::Var table = leaf("embedding", model.embedding);
  grad::Var x = grad::embedding(tape, table, ids);
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const Block& b = model.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    const grad::Var gain = leaf(p + "norm_gain", b.norm_gain);
    const grad::Var u = grad::rmsnorm(tape, x, gain);
    grad::Var v = u;
    if (!b.conv_w.empty()) {
      const grad::Var cw = leaf(p + "conv_w", b.conv_w);
      const grad::Var cb = leaf(p + "conv_b", b.conv_b);
      v = grad::silu(tape, grad::causal_conv(tape, u, cw, cb));
    }
    const grad::LayerNodes mixer = grad::record_layer(tape, b.mixer, v, need_grad);
    if (need_grad) {
      for_each_tensor(b.mixer, [&](std::string_view name, const Matrix&, bool trainable) {
        if (!trainable) return;
        for (const auto& [n, var] : mixer.params) {
          if (n == name) {
            g.leaves.push_back(var);
            return;
          }
        }
        throw ValidationError(p + "mixer tensor " + std::string(name) + " was not recorded");
      });
    }
    const grad::Var gw = leaf(p + "gate_w", b.gate_w);
    const grad::Var gb = leaf(p + "gate_b", b.gate_b);
    const grad::Var ow = leaf(p + "out_w", b.out_w);
    const grad::Var gate = grad::sigmoid(tape, grad::add_bias(tape, grad::matmul_t(tape, u, gw), gb));
    x = grad::add(tape, x, grad::matmul_t(tape, grad::mul(tape, mixer.y, gate), ow));
  }
  const grad::Var fg = leaf("final_gain", model.final_gain);
  const grad::Var cls = leaf("classifier", model.classifier);
  g.logits = grad::matmul_t(tape, grad::rmsnorm(tape, x, fg), cls);
  return g;
}

Matrix forward_model(const TinyModel& model, std::span<const TokenId> ids) {
  grad::Tape tape;
  const ModelGraph g = record_model(tape, model, ids, false);
  return Matrix(ids.size(), model.config.vocab_size, tape.value(g.logits));
}

double masked_cross_entropy(const Matrix& logits, std::span<const TokenId> targets,
                            std::span<const std::uint8_t> mask) {
  require(targets.size() == logits.rows() && mask.size() == logits.rows(), "targets and mask must have T entries");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    if (!mask[t]) continue;
    require(targets[t] < logits.cols(), "target id outside the vocabulary");
    const auto row = logits.row(t);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += std::log(z) + mx - row[targets[t]];
    ++count;
  }
  require(count > 0, "mask selects no position");
  return total / static_cast<double>(count);
}

TokenId argmax(std::span<const double> logits) {
  require(!logits.empty(), "argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size},
          {"width", cfg.width},
          {"state_dim", cfg.state_dim},
          {"layers", cfg.layers},
          {"mixer", std::string(variant_name(cfg.mixer))},
          {"polarization", {{"one_channel", cfg.polarization.one_channel}, {"zero_channel", cfg.polarization.zero_channel}}},
          {"conv", cfg.conv},
          {"conv_kernel", cfg.conv_kernel},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
  cfg.width = j.value("width", cfg.width);
  cfg.state_dim = j.value("state_dim", cfg.state_dim);
  cfg.layers = j.value("layers", cfg.layers);
  if (j.contains("mixer")) cfg.mixer = parse_variant(j.at("mixer").get<std::string>());
  if (j.contains("polarization")) {
    const auto& p = j.at("polarization");
    if (p.is_boolean()) {
      cfg.polarization.one_channel = cfg.polarization.zero_channel = p.get<bool>();
    } else {
      cfg.polarization.one_channel = p.value("one_channel", false);
      cfg.polarization.zero_channel = p.value("zero_channel", false);
    }
  }
  cfg.conv = j.value("conv", cfg.conv);
  cfg.conv_kernel = j.value("conv_kernel", cfg.conv_kernel);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

void write_checkpoint(std::ostream& out, const TinyModel& model) {
  validate_model(model);
  const ModelConfig& cfg = model.config;
  io::BinaryWriter w(out);
  w.header({io::format_version, io::PayloadKind::checkpoint, static_cast<std::uint8_t>(cfg.mixer), 0, cfg.layers,
            cfg.state_dim, cfg.width});
  w.str(to_json(cfg).dump());
  write_matrix(w, model.embedding);
  for (const Block& b : model.blocks) {
    write_matrix(w, b.norm_gain);
    write_matrix(w, b.conv_w);
    write_matrix(w, b.conv_b);
    write_matrix(w, b.gate_w);
    write_matrix(w, b.gate_b);
    write_matrix(w, b.out_w);
    io::write_params(out, b.mixer);
  }
  write_matrix(w, model.final_gain);
  write_matrix(w, model.classifier);
}

TinyModel read_checkpoint(std::istream& in) {
  io::BinaryReader r(in);
  const io::ContainerHeader h = r.header(io::PayloadKind::checkpoint);
  TinyModel m;
  try {
    m.config = model_config_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw io::FormatError(std::string("checkpoint config is malformed: ") + e.what());
  }
  if (h.steps != m.config.layers || h.channels != m.config.width) {
    throw io::FormatError("checkpoint header disagrees with its config");
  }
  m.embedding = read_matrix(r);
  for (std::size_t l = 0; l < m.config.layers; ++l) {
    Block b;
    b.norm_gain = read_matrix(r);
    b.conv_w = read_matrix(r);
    b.conv_b = read_matrix(r);
    b.gate_w = read_matrix(r);
    b.gate_b = read_matrix(r);
    b.out_w = read_matrix(r);
    b.mixer = io::read_params(in);
    m.blocks.push_back(std::move(b));
  }
  m.final_gain = read_matrix(r);
  m.classifier = read_matrix(r);
  try {
    validate_model(m);
  } catch (const ValidationError& e) {
    throw io::FormatError(std::string("checkpoint is inconsistent: ") + e.what());
  }
  return m;
}

void save_checkpoint(const std::string& path, const TinyModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(out, model);
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path);
}

TinyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace ssm::tasks
