#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "ilgnet/ava.hpp"
#include "ilgnet/tensor.hpp"

namespace ilgnet::ava {

// brightness: good images have mean luminance (0.299 R + 0.587 G + 0.114 B) above 128.
// hue: good images have a higher mean red than blue channel.
enum class SynthRule { brightness, hue };

SynthRule parse_synth_rule(std::string_view name);

// Label the rule assigns to a decoded (1, 3, H, W) image.
Label synth_rule_label(SynthRule rule, const Tensor32& image);

struct SynthCorpus {
  std::vector<RatingRecord> records;
  std::vector<Label> labels;
  std::filesystem::path metadata;    // <out_dir>/metadata.csv
  std::filesystem::path image_dir;   // <out_dir>/images, one <image_id>.ppm per record
};

// n/2 good and n/2 bad P6 images plus a metadata CSV whose vote counts put
// good means in [6, 8] and bad means in [2, 4]. Byte-identical for a seed.
SynthCorpus synth_dataset(std::size_t n, std::uint64_t seed, SynthRule rule, const std::filesystem::path& out_dir,
                          std::size_t min_side = 40, std::size_t max_side = 80);

}  // namespace ilgnet::ava
