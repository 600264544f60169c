#pragma once

#include <iosfwd>

#include "ssm/params/params.hpp"

namespace ssm::io {

/// Parameters in the binary container: tag byte = variant, then the named
/// tensors (u32 count; per tensor: name, u64 rows, u64 cols, f64 data) and the
/// polarization flags.
void write_params(std::ostream& out, const LayerParams& params);
LayerParams read_params(std::istream& in);

}  // namespace ssm::io
