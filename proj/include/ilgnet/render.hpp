#pragma once

#include <cstdint>
#include <vector>

#include "ilgnet/tensor.hpp"

namespace ilgnet {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// (C, H, W): channels tiled on a ceil(sqrt(C))-column grid, each channel
// min-max scaled to 0..255 on its own; unused tiles stay black.
// (D): a 1-pixel-tall strip scaled over the whole vector.
// A constant map renders as 128.
GrayImage render_tap(const Tensor32& value);

}  // namespace ilgnet
