#include "ilgnet/init.hpp"

#include <cmath>
#include <random>

namespace ilgnet {

Tensor32 xavier_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  if (fan_in == 0 || fan_out == 0) throw ShapeError("xavier_init: fan_in and fan_out must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor32 out(shape);
  for (auto& v : out.data()) v = static_cast<float>(dist(rng));
  return out;
}

Tensor32 xavier_init(const ConvSpec& spec, std::uint64_t seed) {
  const std::size_t area = spec.kernel_h * spec.kernel_w;
  return xavier_init(spec.weight_shape(), spec.in_channels * area, spec.out_channels * area, seed);
}

}  // namespace ilgnet
