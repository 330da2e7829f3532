#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ilgnet/tensor.hpp"

namespace ilgnet::image {

using Bytes = std::vector<std::uint8_t>;
using ChannelMeans = std::array<float, 3>;

// Binary P6 with maxval 255 -> (1, 3, H, W) with values in [0, 255].
Tensor32 decode_ppm(std::span<const std::uint8_t> bytes);
// (1, 3, H, W) -> P6; values are rounded and clamped to [0, 255].
Bytes encode_ppm(const Tensor32& image);
// 8-bit grayscale P5, row-major `pixels` of width * height.
Bytes encode_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> pixels);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
Tensor32 load_ppm(const std::filesystem::path& path);

// Bilinear with half-pixel centers and edge clamping; aspect ratio is not kept.
Tensor32 resize_bilinear(const Tensor32& image, std::size_t out_h, std::size_t out_w);
inline Tensor32 resize_bilinear(const Tensor32& image, std::size_t side) { return resize_bilinear(image, side, side); }

// Resize to side x side, then subtract the per-channel means.
Tensor32 preprocess(const Tensor32& image, const ChannelMeans& means, std::size_t side);

// Per-channel mean over every pixel of every image (images may differ in size).
ChannelMeans compute_channel_means(std::span<const Tensor32> images);

}  // namespace ilgnet::image
