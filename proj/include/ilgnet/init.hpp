#pragma once

#include <cstdint>

#include "ilgnet/ops.hpp"
#include "ilgnet/tensor.hpp"

namespace ilgnet {

// Uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
Tensor32 xavier_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

// fan_in = in * kh * kw, fan_out = out * kh * kw.
Tensor32 xavier_init(const ConvSpec& spec, std::uint64_t seed);

}  // namespace ilgnet
