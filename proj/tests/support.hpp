#pragma once

#include <cmath>
#include <complex>
#include <random>

#include "ssm/core/coefficients.hpp"
#include "ssm/core/matrix.hpp"

namespace ssm::testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Matrix random_sequence(std::mt19937_64& rng, std::size_t T, std::size_t D, double scale = 1.0) {
  Matrix x(T, D);
  std::normal_distribution<double> dist(0.0, scale);
  for (double& v : x.flat()) v = dist(rng);
  return x;
}

enum class GateKind { positive, signed_real, complex };

/// Random single-channel coefficients with gates of modulus in (0.05, 1).
inline StepCoefficients random_coeffs(std::mt19937_64& rng, std::size_t T, std::size_t N, GateKind kind) {
  StepCoefficients c;
  for (std::size_t t = 0; t < T; ++t) {
    Step s;
    for (std::size_t n = 0; n < N; ++n) {
      const double mod = uniform(rng, 0.05, 1.0);
      switch (kind) {
        case GateKind::positive: s.a.emplace_back(mod, 0.0); break;
        case GateKind::signed_real: s.a.emplace_back(uniform(rng, -1.0, 1.0) < 0 ? -mod : mod, 0.0); break;
        case GateKind::complex: s.a.push_back(std::polar(mod, uniform(rng, -M_PI, M_PI))); break;
      }
      s.b.push_back(uniform(rng, -1.0, 1.0));
      s.c.push_back(uniform(rng, -1.0, 1.0));
    }
    s.delta = uniform(rng, 0.01, 1.0);
    c.push_back(std::move(s));
  }
  return c;
}

inline StepCoefficients constant_coeffs(std::size_t T, Complex a, double delta, std::vector<double> b, double c) {
  StepCoefficients out;
  for (std::size_t t = 0; t < T; ++t) out.push_back(Step{{a}, {b[t]}, {c}, delta});
  return out;
}

}  // namespace ssm::testing
