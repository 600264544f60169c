#pragma once

#include "ssm/core/coefficients.hpp"
#include "ssm/core/matrix.hpp"
#include "ssm/params/params.hpp"

namespace ssm {

/// One StepCoefficients per token channel of x (T x D).
ChannelCoefficients build_s4(const S4Params& params, const SequenceInput& x);
ChannelCoefficients build_mamba(const MambaParams& params, const SequenceInput& x);
ChannelCoefficients build_lam(const LamParams& params, const SequenceInput& x);
ChannelCoefficients build_coefficients(const LayerParams& params, const SequenceInput& x);

/// Untaped layer evaluation: build coefficients, scan each channel, return the
/// real outputs as T x D.
Matrix layer_forward(const LayerParams& params, const SequenceInput& x);

}  // namespace ssm
