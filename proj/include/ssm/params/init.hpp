#pragma once

#include <cstddef>
#include <cstdint>

#include "ssm/params/params.hpp"

namespace ssm {

inline constexpr double init_delta_min = 1e-3;
inline constexpr double init_delta_max = 1e-1;

/// Deterministic initialization. `state_dim` counts polarized channels, so it
/// must exceed polarization.extra_channels(). Free pre-exponential rates are
/// -(n+1); weights are N(0, 1/D); delta biases put the zero-input delta
/// log-uniformly in [1e-3, 1e-1]. Griffin ignores `state_dim` (one state per
/// channel).
LayerParams init_params(Variant variant, std::size_t state_dim, std::size_t channels, std::uint64_t seed,
                        const PolarizationConfig& polarization = {});

}  // namespace ssm
