#include "ilgnet/render.hpp"

#include <algorithm>
#include <cmath>

namespace ilgnet {

namespace {

void scale_into(std::span<const float> values, std::uint8_t* out, std::size_t stride, std::size_t width) {
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const float mn = *lo, mx = *hi;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint8_t v = 128;
    if (mx > mn) v = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - mn) / (double(mx) - mn)));
    out[(i / width) * stride + i % width] = v;
  }
}

}  // namespace

GrayImage render_tap(const Tensor32& value) {
  GrayImage img;
  if (value.rank() == 1) {
    img.width = value.dim(0);
    img.height = 1;
    img.pixels.assign(img.width, 0);
    scale_into(value.data(), img.pixels.data(), img.width, img.width);
    return img;
  }
  if (value.rank() != 3) throw ShapeError("render_tap expects (C, H, W) or (D), got " + to_string(value.shape()));
  const std::size_t c = value.dim(0), h = value.dim(1), w = value.dim(2);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(c))));
  const std::size_t rows = (c + cols - 1) / cols;
  img.width = cols * w;
  img.height = rows * h;
  img.pixels.assign(img.width * img.height, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::size_t r = ch / cols, col = ch % cols;
    std::uint8_t* origin = img.pixels.data() + r * h * img.width + col * w;
    scale_into(value.data().subspan(ch * h * w, h * w), origin, img.width, w);
  }
  return img;
}

}  // namespace ilgnet
