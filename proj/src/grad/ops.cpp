#include "ssm/grad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ssm/core/numeric.hpp"
#include "ssm/core/scan.hpp"

namespace ssm::grad {
namespace {

using Node = Tape::Node;

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + ")";
}

void expect_rank(const Tape& tape, Var v, std::size_t rank, const char* op, const char* arg) {
  if (tape.shape(v).size() != rank) {
    shape_error(op, std::string(arg) + " must have rank " + std::to_string(rank) + ", got " + shape_str(tape.shape(v)));
  }
}

const double* in(const Tape& tape, const Node& n, std::size_t i) { return tape.value(n.inputs[i]).data(); }

// Elementwise unary op: y = f(a), dy/da = df(a, y).
template <class F, class DF>
Var unary(Tape& tape, const char* name, Var a, F f, DF df) {
  const Shape shape = tape.shape(a);
  const std::size_t steps = shape.empty() ? 1 : shape[0];
  return tape.record(
      name, shape, {a}, steps,
      [f](const Tape& t, Node& n) {
        const double* x = in(t, n, 0);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = f(x[i]);
      },
      [df](Tape& t, const Node& n) {
        double* ga = t.grad_target(n.inputs[0]);
        if (!ga) return;
        const double* x = t.value(n.inputs[0]).data();
        for (std::size_t i = 0; i < n.value.size(); ++i) ga[i] += n.grad[i] * df(x[i], n.value[i]);
      });
}

void same_shape(const Tape& tape, Var a, Var b, const char* op) {
  if (tape.shape(a) != tape.shape(b)) {
    shape_error(op, "shape mismatch " + shape_str(tape.shape(a)) + " vs " + shape_str(tape.shape(b)));
  }
}

}  // namespace

Var matmul_t(Tape& tape, Var x, Var w) {
  expect_rank(tape, x, 2, "matmul_t", "x");
  expect_rank(tape, w, 2, "matmul_t", "w");
  const std::size_t T = tape.shape(x)[0], K = tape.shape(x)[1], M = tape.shape(w)[0];
  if (tape.shape(w)[1] != K) shape_error("matmul_t", "inner dimensions differ: x " + shape_str(tape.shape(x)) + ", w " + shape_str(tape.shape(w)));
  return tape.record(
      "matmul_t", {T, M}, {x, w}, T,
      [T, K, M](const Tape& t, Node& n) {
        const double* xv = in(t, n, 0);
        const double* wv = in(t, n, 1);
        // Accumulating over k into all M outputs at once keeps each output's
        // left-to-right order (so it matches dot_row) and vectorizes over m.
        std::vector<double> wt(K * M);
        for (std::size_t m = 0; m < M; ++m) {
          for (std::size_t k = 0; k < K; ++k) wt[k * M + m] = wv[m * K + k];
        }
        for (std::size_t r = 0; r < T; ++r) {
          const double* xr = xv + r * K;
          double* out = n.value.data() + r * M;
          std::fill(out, out + M, 0.0);
          for (std::size_t k = 0; k < K; ++k) {
            const double xk = xr[k];
            const double* wk = wt.data() + k * M;
            for (std::size_t m = 0; m < M; ++m) out[m] += wk[m] * xk;
          }
        }
      },
      [T, K, M](Tape& t, const Node& n) {
        const double* xv = t.value(n.inputs[0]).data();
        const double* wv = t.value(n.inputs[1]).data();
        if (double* gx = t.grad_target(n.inputs[0])) {
          for (std::size_t r = 0; r < T; ++r) {
            for (std::size_t m = 0; m < M; ++m) {
              const double g = n.grad[r * M + m];
              if (g == 0.0) continue;
              const double* wr = wv + m * K;
              double* gr = gx + r * K;
              for (std::size_t k = 0; k < K; ++k) gr[k] += g * wr[k];
            }
          }
        }
        if (double* gw = t.grad_target(n.inputs[1])) {
          for (std::size_t r = 0; r < T; ++r) {
            const double* xr = xv + r * K;
            for (std::size_t m = 0; m < M; ++m) {
              const double g = n.grad[r * M + m];
              if (g == 0.0) continue;
              double* gr = gw + m * K;
              for (std::size_t k = 0; k < K; ++k) gr[k] += g * xr[k];
            }
          }
        }
      });
}

Var add_bias(Tape& tape, Var x, Var b) {
  expect_rank(tape, x, 2, "add_bias", "x");
  const std::size_t T = tape.shape(x)[0], M = tape.shape(x)[1];
  if (tape.value(b).size() != M) shape_error("add_bias", "bias has " + std::to_string(tape.value(b).size()) + " entries, expected " + std::to_string(M));
  return tape.record(
      "add_bias", {T, M}, {x, b}, T,
      [T, M](const Tape& t, Node& n) {
        const double* xv = in(t, n, 0);
        const double* bv = in(t, n, 1);
        for (std::size_t r = 0; r < T; ++r) {
          for (std::size_t m = 0; m < M; ++m) n.value[r * M + m] = xv[r * M + m] + bv[m];
        }
      },
      [T, M](Tape& t, const Node& n) {
        if (double* gx = t.grad_target(n.inputs[0])) {
          for (std::size_t i = 0; i < T * M; ++i) gx[i] += n.grad[i];
        }
        if (double* gb = t.grad_target(n.inputs[1])) {
          for (std::size_t r = 0; r < T; ++r) {
            for (std::size_t m = 0; m < M; ++m) gb[m] += n.grad[r * M + m];
          }
        }
      });
}

Var add(Tape& tape, Var a, Var b) {
  same_shape(tape, a, b, "add");
  const Shape shape = tape.shape(a);
  return tape.record(
      "add", shape, {a, b}, shape.empty() ? 1 : shape[0],
      [](const Tape& t, Node& n) {
        const double* x = in(t, n, 0);
        const double* y = in(t, n, 1);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = x[i] + y[i];
      },
      [](Tape& t, const Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
          if (double* g = t.grad_target(n.inputs[k])) {
            for (std::size_t i = 0; i < n.value.size(); ++i) g[i] += n.grad[i];
          }
        }
      });
}

Var mul(Tape& tape, Var a, Var b) {
  same_shape(tape, a, b, "mul");
  const Shape shape = tape.shape(a);
  return tape.record(
      "mul", shape, {a, b}, shape.empty() ? 1 : shape[0],
      [](const Tape& t, Node& n) {
        const double* x = in(t, n, 0);
        const double* y = in(t, n, 1);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = x[i] * y[i];
      },
      [](Tape& t, const Node& n) {
        const double* x = t.value(n.inputs[0]).data();
        const double* y = t.value(n.inputs[1]).data();
        if (double* g = t.grad_target(n.inputs[0])) {
          for (std::size_t i = 0; i < n.value.size(); ++i) g[i] += n.grad[i] * y[i];
        }
        if (double* g = t.grad_target(n.inputs[1])) {
          for (std::size_t i = 0; i < n.value.size(); ++i) g[i] += n.grad[i] * x[i];
        }
      });
}

Var neg(Tape& tape, Var a) {
  return unary(tape, "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Tape& tape, Var a, double c) {
  return unary(tape, "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var exp(Tape& tape, Var a) {
  return unary(tape, "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var softplus(Tape& tape, Var a) {
  return unary(tape, "softplus", a, [](double x) { return ssm::softplus(x); },
               [](double x, double) { return ssm::sigmoid(x); });
}

Var sigmoid(Tape& tape, Var a) {
  return unary(tape, "sigmoid", a, [](double x) { return ssm::sigmoid(x); },
               [](double, double y) { return y * (1.0 - y); });
}

Var silu(Tape& tape, Var a) {
  return unary(tape, "silu", a, [](double x) { return x * ssm::sigmoid(x); },
               [](double x, double) {
                 const double s = ssm::sigmoid(x);
                 return s + x * s * (1.0 - s);
               });
}

Var sqrt_one_minus_square(Tape& tape, Var a) {
  return unary(tape, "sqrt_one_minus_square", a, [](double x) { return std::sqrt(1.0 - x * x); },
               [](double x, double y) { return -x / y; });
}

Var reshape(Tape& tape, Var a, Shape shape) {
  if (element_count(shape) != tape.value(a).size()) {
    shape_error("reshape", shape_str(tape.shape(a)) + " cannot become " + shape_str(shape));
  }
  const std::size_t steps = shape.empty() ? 1 : shape[0];
  return tape.record(
      "reshape", std::move(shape), {a}, steps,
      [](const Tape& t, Node& n) { n.value = t.value(n.inputs[0]); },
      [](Tape& t, const Node& n) {
        if (double* g = t.grad_target(n.inputs[0])) {
          for (std::size_t i = 0; i < n.value.size(); ++i) g[i] += n.grad[i];
        }
      });
}

Var repeat_time(Tape& tape, Var p, std::size_t steps) {
  const std::size_t D = tape.value(p).size();
  return tape.record(
      "repeat_time", {steps, D}, {p}, steps,
      [steps, D](const Tape& t, Node& n) {
        const double* v = in(t, n, 0);
        for (std::size_t r = 0; r < steps; ++r) std::copy(v, v + D, n.value.begin() + r * D);
      },
      [steps, D](Tape& t, const Node& n) {
        if (double* g = t.grad_target(n.inputs[0])) {
          for (std::size_t r = 0; r < steps; ++r) {
            for (std::size_t d = 0; d < D; ++d) g[d] += n.grad[r * D + d];
          }
        }
      });
}

Var broadcast_time(Tape& tape, Var p, std::size_t steps) {
  expect_rank(tape, p, 2, "broadcast_time", "p");
  const std::size_t D = tape.shape(p)[0], N = tape.shape(p)[1];
  return tape.record(
      "broadcast_time", {steps, D, N}, {p}, steps,
      [steps, D, N](const Tape& t, Node& n) {
        const double* v = in(t, n, 0);
        for (std::size_t r = 0; r < steps; ++r) std::copy(v, v + D * N, n.value.begin() + r * D * N);
      },
      [steps, D, N](Tape& t, const Node& n) {
        if (double* g = t.grad_target(n.inputs[0])) {
          for (std::size_t r = 0; r < steps; ++r) {
            for (std::size_t i = 0; i < D * N; ++i) g[i] += n.grad[r * D * N + i];
          }
        }
      });
}

Var expand_channels(Tape& tape, Var v, std::size_t channels) {
  expect_rank(tape, v, 2, "expand_channels", "v");
  const std::size_t T = tape.shape(v)[0], N = tape.shape(v)[1], D = channels;
  return tape.record(
      "expand_channels", {T, D, N}, {v}, T,
      [T, D, N](const Tape& t, Node& n) {
        const double* x = in(t, n, 0);
        for (std::size_t r = 0; r < T; ++r) {
          for (std::size_t d = 0; d < D; ++d) std::copy(x + r * N, x + (r + 1) * N, n.value.begin() + (r * D + d) * N);
        }
      },
      [T, D, N](Tape& t, const Node& n) {
        if (double* g = t.grad_target(n.inputs[0])) {
          for (std::size_t r = 0; r < T; ++r) {
            for (std::size_t d = 0; d < D; ++d) {
              for (std::size_t k = 0; k < N; ++k) g[r * N + k] += n.grad[(r * D + d) * N + k];
            }
          }
        }
      });
}

Var expand_state(Tape& tape, Var v, std::size_t state_dim) {
  expect_rank(tape, v, 2, "expand_state", "v");
  const std::size_t T = tape.shape(v)[0], D = tape.shape(v)[1], N = state_dim;
  return tape.record(
      "expand_state", {T, D, N}, {v}, T,
      [T, D, N](const Tape& t, Node& n) {
        const double* x = in(t, n, 0);
        for (std::size_t i = 0; i < T * D; ++i) std::fill_n(n.value.begin() + i * N, N, x[i]);
      },
      [T, D, N](Tape& t, const Node& n) {
        if (double* g = t.grad_target(n.inputs[0])) {
          for (std::size_t i = 0; i < T * D; ++i) {
            for (std::size_t k = 0; k < N; ++k) g[i] += n.grad[i * N + k];
          }
        }
      });
}

Var fill(Tape& tape, Var scalar, Shape shape) {
  if (tape.value(scalar).size() != 1) shape_error("fill", "source must hold one element");
  const std::size_t steps = shape.empty() ? 1 : shape[0];
  return tape.record(
      "fill", std::move(shape), {scalar}, steps,
      [](const Tape& t, Node& n) { std::fill(n.value.begin(), n.value.end(), t.value(n.inputs[0])[0]); },
      [](Tape& t, const Node& n) {
        if (double* g = t.grad_target(n.inputs[0])) {
          for (double v : n.grad) g[0] += v;
        }
      });
}

Var pad_columns(Tape& tape, Var a, std::vector<double> lead, std::vector<double> trail) {
  expect_rank(tape, a, 2, "pad_columns", "a");
  const std::size_t D = tape.shape(a)[0], F = tape.shape(a)[1];
  const std::size_t L = lead.size(), N = F + lead.size() + trail.size();
  return tape.record(
      "pad_columns", {D, N}, {a}, 1,
      [D, F, N, lead, trail](const Tape& t, Node& n) {
        const double* x = in(t, n, 0);
        for (std::size_t d = 0; d < D; ++d) {
          double* row = n.value.data() + d * N;
          std::copy(lead.begin(), lead.end(), row);
          std::copy(x + d * F, x + (d + 1) * F, row + lead.size());
          std::copy(trail.begin(), trail.end(), row + lead.size() + F);
        }
      },
      [D, F, N, L](Tape& t, const Node& n) {
        if (double* g = t.grad_target(n.inputs[0])) {
          for (std::size_t d = 0; d < D; ++d) {
            for (std::size_t k = 0; k < F; ++k) g[d * F + k] += n.grad[d * N + L + k];
          }
        }
      });
}

Var discretize(Tape& tape, Var delta, Var rate) {
  expect_rank(tape, delta, 2, "discretize", "delta");
  expect_rank(tape, rate, 2, "discretize", "rate");
  const std::size_t T = tape.shape(delta)[0], D = tape.shape(delta)[1], N = tape.shape(rate)[1];
  if (tape.shape(rate)[0] != D) shape_error("discretize", "rate rows must equal channel count");
  return tape.record(
      "discretize", {T, D, N}, {delta, rate}, T,
      [T, D, N](const Tape& t, Node& n) {
        const double* dv = in(t, n, 0);
        const double* rv = in(t, n, 1);
        for (std::size_t r = 0; r < T; ++r) {
          for (std::size_t d = 0; d < D; ++d) {
            const double dt = dv[r * D + d];
            for (std::size_t k = 0; k < N; ++k) n.value[(r * D + d) * N + k] = std::exp(dt * rv[d * N + k]);
          }
        }
      },
      [T, D, N](Tape& t, const Node& n) {
        const double* dv = t.value(n.inputs[0]).data();
        const double* rv = t.value(n.inputs[1]).data();
        double* gd = t.grad_target(n.inputs[0]);
        double* gr = t.grad_target(n.inputs[1]);
        for (std::size_t r = 0; r < T; ++r) {
          for (std::size_t d = 0; d < D; ++d) {
            const double dt = dv[r * D + d];
            for (std::size_t k = 0; k < N; ++k) {
              const std::size_t i = (r * D + d) * N + k;
              const double g = n.grad[i] * n.value[i];
              if (gd) gd[r * D + d] += g * rv[d * N + k];
              if (gr) gr[d * N + k] += g * dt;
            }
          }
        }
      });
}

Var channel_scale(Tape& tape, Var p, Var x) {
  expect_rank(tape, p, 2, "channel_scale", "p");
  expect_rank(tape, x, 2, "channel_scale", "x");
  const std::size_t T = tape.shape(x)[0], D = tape.shape(x)[1], N = tape.shape(p)[1];
  if (tape.shape(p)[0] != D) shape_error("channel_scale", "p rows must equal channel count");
  return tape.record(
      "channel_scale", {T, D, N}, {p, x}, T,
      [T, D, N](const Tape& t, Node& n) {
        const double* pv = in(t, n, 0);
        const double* xv = in(t, n, 1);
        for (std::size_t r = 0; r < T; ++r) {
          for (std::size_t d = 0; d < D; ++d) {
            for (std::size_t k = 0; k < N; ++k) n.value[(r * D + d) * N + k] = pv[d * N + k] * xv[r * D + d];
          }
        }
      },
      [T, D, N](Tape& t, const Node& n) {
        const double* pv = t.value(n.inputs[0]).data();
        const double* xv = t.value(n.inputs[1]).data();
        double* gp = t.grad_target(n.inputs[0]);
        double* gx = t.grad_target(n.inputs[1]);
        for (std::size_t r = 0; r < T; ++r) {
          for (std::size_t d = 0; d < D; ++d) {
            for (std::size_t k = 0; k < N; ++k) {
              const double g = n.grad[(r * D + d) * N + k];
              if (gp) gp[d * N + k] += g * xv[r * D + d];
              if (gx) gx[r * D + d] += g * pv[d * N + k];
            }
          }
        }
      });
}

Var outer(Tape& tape, Var x, Var w) {
  expect_rank(tape, x, 2, "outer", "x");
  expect_rank(tape, w, 2, "outer", "w");
  const std::size_t T = tape.shape(x)[0], D = tape.shape(x)[1], N = tape.shape(w)[1];
  if (tape.shape(w)[0] != T) shape_error("outer", "x and w disagree on T");
  return tape.record(
      "outer", {T, D, N}, {x, w}, T,
      [T, D, N](const Tape& t, Node& n) {
        const double* xv = in(t, n, 0);
        const double* wv = in(t, n, 1);
        for (std::size_t r = 0; r < T; ++r) {
          for (std::size_t d = 0; d < D; ++d) {
            for (std::size_t k = 0; k < N; ++k) n.value[(r * D + d) * N + k] = wv[r * N + k] * xv[r * D + d];
          }
        }
      },
      [T, D, N](Tape& t, const Node& n) {
        const double* xv = t.value(n.inputs[0]).data();
        const double* wv = t.value(n.inputs[1]).data();
        double* gx = t.grad_target(n.inputs[0]);
        double* gw = t.grad_target(n.inputs[1]);
        for (std::size_t r = 0; r < T; ++r) {
          for (std::size_t d = 0; d < D; ++d) {
            for (std::size_t k = 0; k < N; ++k) {
              const double g = n.grad[(r * D + d) * N + k];
              if (gx) gx[r * D + d] += g * wv[r * N + k];
              if (gw) gw[r * N + k] += g * xv[r * D + d];
            }
          }
        }
      });
}

Var scan(Tape& tape, Var a, Var b, Var c, Var delta) {
  expect_rank(tape, a, 3, "scan", "a");
  same_shape(tape, a, b, "scan");
  same_shape(tape, a, c, "scan");
  const std::size_t T = tape.shape(a)[0], D = tape.shape(a)[1], N = tape.shape(a)[2];
  if (tape.shape(delta) != Shape{T, D}) shape_error("scan", "delta must be " + shape_str({T, D}));
  return tape.record(
      "scan", {T, D}, {a, b, c, delta}, T,
      [T, D, N](const Tape& t, Node& n) {
        const double* av = in(t, n, 0);
        const double* bv = in(t, n, 1);
        const double* cv = in(t, n, 2);
        const double* dv = in(t, n, 3);
        const std::size_t DN = D * N;
        n.saved.assign((T + 1) * DN, 0.0);
        for (std::size_t r = 0; r < T; ++r) {
          const double* prev = n.saved.data() + r * DN;
          double* cur = n.saved.data() + (r + 1) * DN;
          for (std::size_t d = 0; d < D; ++d) {
            const double dt = dv[r * D + d];
            double y = 0.0;
            for (std::size_t k = 0; k < N; ++k) {
              const std::size_t i = r * DN + d * N + k;
              const double h = scan_update(av[i], prev[d * N + k], dt, bv[i]);
              cur[d * N + k] = h;
              y += cv[i] * h;
            }
            n.value[r * D + d] = y;
          }
        }
      },
      [T, D, N](Tape& t, const Node& n) {
        const double* av = t.value(n.inputs[0]).data();
        const double* bv = t.value(n.inputs[1]).data();
        const double* cv = t.value(n.inputs[2]).data();
        const double* dv = t.value(n.inputs[3]).data();
        double* ga = t.grad_target(n.inputs[0]);
        double* gb = t.grad_target(n.inputs[1]);
        double* gc = t.grad_target(n.inputs[2]);
        double* gd = t.grad_target(n.inputs[3]);
        const std::size_t DN = D * N;
        // carry = a_{t+1} * adjoint(h_{t+1}), the part of adjoint(h_t) that
        // flows back through the next step.
        std::vector<double> carry(DN, 0.0);
        for (std::size_t r = T; r-- > 0;) {
          const double* prev = n.saved.data() + r * DN;
          const double* cur = n.saved.data() + (r + 1) * DN;
          for (std::size_t d = 0; d < D; ++d) {
            const double gy = n.grad[r * D + d];
            const double dt = dv[r * D + d];
            double gdt = 0.0;
            for (std::size_t k = 0; k < N; ++k) {
              const std::size_t i = r * DN + d * N + k;
              const double lam = gy * cv[i] + carry[d * N + k];
              if (ga) ga[i] += lam * prev[d * N + k];
              if (gb) gb[i] += lam * dt;
              if (gc) gc[i] += gy * cur[d * N + k];
              gdt += lam * bv[i];
              carry[d * N + k] = av[i] * lam;
            }
            if (gd) gd[r * D + d] += gdt;
          }
        }
      });
}

std::vector<double> scan_states(const Tape& tape, Var scan_node) {
  const auto& n = tape.node(scan_node);
  if (n.op != "scan") throw std::invalid_argument("scan_states: node is '" + n.op + "', not a scan");
  const std::size_t DN = n.saved.size() / (n.shape[0] + 1);
  return std::vector<double>(n.saved.begin() + DN, n.saved.end());
}

Var embedding(Tape& tape, Var table, std::span<const std::uint32_t> ids) {
  expect_rank(tape, table, 2, "embedding", "table");
  const std::size_t V = tape.shape(table)[0], D = tape.shape(table)[1], T = ids.size();
  std::vector<std::uint32_t> idv(ids.begin(), ids.end());
  for (auto id : idv) {
    if (id >= V) shape_error("embedding", "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(V));
  }
  return tape.record(
      "embedding", {T, D}, {table}, T,
      [idv, D](const Tape& t, Node& n) {
        const double* tv = in(t, n, 0);
        for (std::size_t r = 0; r < idv.size(); ++r) std::copy(tv + idv[r] * D, tv + (idv[r] + 1) * D, n.value.begin() + r * D);
      },
      [idv, D](Tape& t, const Node& n) {
        if (double* g = t.grad_target(n.inputs[0])) {
          for (std::size_t r = 0; r < idv.size(); ++r) {
            for (std::size_t d = 0; d < D; ++d) g[idv[r] * D + d] += n.grad[r * D + d];
          }
        }
      });
}

Var rmsnorm(Tape& tape, Var x, Var gain, double eps) {
  expect_rank(tape, x, 2, "rmsnorm", "x");
  const std::size_t T = tape.shape(x)[0], D = tape.shape(x)[1];
  if (tape.value(gain).size() != D) shape_error("rmsnorm", "gain must hold D entries");
  return tape.record(
      "rmsnorm", {T, D}, {x, gain}, T,
      [T, D, eps](const Tape& t, Node& n) {
        const double* xv = in(t, n, 0);
        const double* gv = in(t, n, 1);
        n.saved.assign(T, 0.0);
        for (std::size_t r = 0; r < T; ++r) {
          double ss = 0.0;
          for (std::size_t d = 0; d < D; ++d) ss += xv[r * D + d] * xv[r * D + d];
          const double inv = 1.0 / std::sqrt(ss / static_cast<double>(D) + eps);
          n.saved[r] = inv;
          for (std::size_t d = 0; d < D; ++d) n.value[r * D + d] = xv[r * D + d] * inv * gv[d];
        }
      },
      [T, D](Tape& t, const Node& n) {
        const double* xv = t.value(n.inputs[0]).data();
        const double* gv = t.value(n.inputs[1]).data();
        double* gx = t.grad_target(n.inputs[0]);
        double* gg = t.grad_target(n.inputs[1]);
        for (std::size_t r = 0; r < T; ++r) {
          const double inv = n.saved[r];
          double dot = 0.0;
          for (std::size_t d = 0; d < D; ++d) {
            const double u = xv[r * D + d] * inv;
            const double gu = n.grad[r * D + d] * gv[d];
            dot += gu * u;
            if (gg) gg[d] += n.grad[r * D + d] * u;
          }
          if (!gx) continue;
          const double mean = dot / static_cast<double>(D);
          for (std::size_t d = 0; d < D; ++d) {
            const double u = xv[r * D + d] * inv;
            const double gu = n.grad[r * D + d] * gv[d];
            gx[r * D + d] += inv * (gu - u * mean);
          }
        }
      });
}

Var causal_conv(Tape& tape, Var x, Var w, Var bias) {
  expect_rank(tape, x, 2, "causal_conv", "x");
  expect_rank(tape, w, 2, "causal_conv", "w");
  const std::size_t T = tape.shape(x)[0], D = tape.shape(x)[1], K = tape.shape(w)[1];
  if (tape.shape(w)[0] != D || tape.value(bias).size() != D) shape_error("causal_conv", "w must be D x K and bias D");
  return tape.record(
      "causal_conv", {T, D}, {x, w, bias}, T,
      [T, D, K](const Tape& t, Node& n) {
        const double* xv = in(t, n, 0);
        const double* wv = in(t, n, 1);
        const double* bv = in(t, n, 2);
        for (std::size_t r = 0; r < T; ++r) {
          for (std::size_t d = 0; d < D; ++d) {
            double acc = bv[d];
            for (std::size_t j = 0; j < K; ++j) {
              if (r + j + 1 < K) continue;
              acc += wv[d * K + j] * xv[(r + j + 1 - K) * D + d];
            }
            n.value[r * D + d] = acc;
          }
        }
      },
      [T, D, K](Tape& t, const Node& n) {
        const double* xv = t.value(n.inputs[0]).data();
        const double* wv = t.value(n.inputs[1]).data();
        double* gx = t.grad_target(n.inputs[0]);
        double* gw = t.grad_target(n.inputs[1]);
        double* gb = t.grad_target(n.inputs[2]);
        for (std::size_t r = 0; r < T; ++r) {
          for (std::size_t d = 0; d < D; ++d) {
            const double g = n.grad[r * D + d];
            if (gb) gb[d] += g;
            for (std::size_t j = 0; j < K; ++j) {
              if (r + j + 1 < K) continue;
              const std::size_t src = (r + j + 1 - K) * D + d;
              if (gw) gw[d * K + j] += g * xv[src];
              if (gx) gx[src] += g * wv[d * K + j];
            }
          }
        }
      });
}

Var masked_cross_entropy(Tape& tape, Var logits, std::span<const std::uint32_t> targets,
                         std::span<const std::uint8_t> mask, double weight) {
  expect_rank(tape, logits, 2, "masked_cross_entropy", "logits");
  const std::size_t T = tape.shape(logits)[0], V = tape.shape(logits)[1];
  if (targets.size() != T || mask.size() != T) shape_error("masked_cross_entropy", "targets and mask must have T entries");
  std::vector<std::uint32_t> tv(targets.begin(), targets.end());
  std::vector<std::uint8_t> mv(mask.begin(), mask.end());
  bool any = false;
  for (std::size_t r = 0; r < T; ++r) {
    if (!mv[r]) continue;
    any = true;
    if (tv[r] >= V) shape_error("masked_cross_entropy", "target id outside vocabulary");
  }
  if (!any) shape_error("masked_cross_entropy", "mask selects no position");
  return tape.record(
      "masked_cross_entropy", {1}, {logits}, T,
      [tv, mv, T, V, weight](const Tape& t, Node& n) {
        const double* lv = in(t, n, 0);
        n.saved.assign(T * V, 0.0);  // softmax rows at masked positions
        double total = 0.0;
        for (std::size_t r = 0; r < T; ++r) {
          if (!mv[r]) continue;
          const double* row = lv + r * V;
          const double top = *std::max_element(row, row + V);
          double z = 0.0;
          for (std::size_t v = 0; v < V; ++v) z += std::exp(row[v] - top);
          const double lse = top + std::log(z);
          for (std::size_t v = 0; v < V; ++v) n.saved[r * V + v] = std::exp(row[v] - lse);
          total += lse - row[tv[r]];
        }
        n.value[0] = weight * total;
      },
      [tv, mv, T, V, weight](Tape& t, const Node& n) {
        double* g = t.grad_target(n.inputs[0]);
        if (!g) return;
        const double s = n.grad[0] * weight;
        for (std::size_t r = 0; r < T; ++r) {
          if (!mv[r]) continue;
          for (std::size_t v = 0; v < V; ++v) g[r * V + v] += s * n.saved[r * V + v];
          g[r * V + tv[r]] -= s;
        }
      });
}

}  // namespace ssm::grad
