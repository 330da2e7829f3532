#include "ilgnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "ilgnet/error.hpp"
#include "ilgnet/image.hpp"

namespace ilgnet::ava {
namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::array<double, 3> channel_means(const Tensor32& image) {
  const std::size_t plane = image.dim(2) * image.dim(3);
  std::array<double, 3> m{};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) m[c] += image[c * plane + i];
    m[c] /= static_cast<double>(plane);
  }
  return m;
}

// Smooth pattern plus pixel noise around per-channel base levels.
Tensor32 render(Rng& rng, std::size_t h, std::size_t w, const std::array<double, 3>& base) {
  Tensor32 img({1, 3, h, w});
  const double fx = uniform(rng, 0.05, 0.4), fy = uniform(rng, 0.05, 0.4), phase = uniform(rng, 0.0, 6.28);
  const double amplitude = uniform(rng, 5.0, 25.0);
  std::uniform_real_distribution<double> noise(-15.0, 15.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double wave = amplitude * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(base[c] + wave + noise(rng), 0.0, 255.0);
        img.at(0, c, y, x) = static_cast<float>(std::lround(v));
      }
    }
  }
  return img;
}

std::array<double, 3> base_levels(Rng& rng, SynthRule rule, Label label) {
  const bool good = label == Label::good;
  if (rule == SynthRule::brightness) {
    const double level = good ? uniform(rng, 150.0, 200.0) : uniform(rng, 55.0, 105.0);
    return {level + uniform(rng, -15.0, 15.0), level + uniform(rng, -15.0, 15.0), level + uniform(rng, -15.0, 15.0)};
  }
  const double level = uniform(rng, 90.0, 160.0);
  const double tilt = uniform(rng, 25.0, 50.0);
  return {level + (good ? tilt : -tilt), level + uniform(rng, -10.0, 10.0), level + (good ? -tilt : tilt)};
}

RatingRecord synth_votes(Rng& rng, std::string id, Label label) {
  RatingRecord r;
  r.image_id = std::move(id);
  const auto total = std::uniform_int_distribution<std::uint32_t>(78, 549)(rng);
  const std::uint32_t low = label == Label::good ? 6 : 2;
  std::uniform_int_distribution<std::uint32_t> score(low, low + 2);
  for (std::uint32_t v = 0; v < total; ++v) ++r.counts[score(rng) - 1];
  return r;
}

}  // namespace

SynthRule parse_synth_rule(std::string_view name) {
  if (name == "brightness") return SynthRule::brightness;
  if (name == "hue") return SynthRule::hue;
  throw DataError("unknown synthetic rule '" + std::string(name) + "' (expected brightness or hue)");
}

Label synth_rule_label(SynthRule rule, const Tensor32& image) {
  const auto m = channel_means(image);
  if (rule == SynthRule::brightness) {
    return 0.299 * m[0] + 0.587 * m[1] + 0.114 * m[2] > 128.0 ? Label::good : Label::bad;
  }
  return m[0] > m[2] ? Label::good : Label::bad;
}

SynthCorpus synth_dataset(std::size_t n, std::uint64_t seed, SynthRule rule, const std::filesystem::path& out_dir,
                          std::size_t min_side, std::size_t max_side) {
  if (n < 2 || n % 2 != 0) throw DataError("synth_dataset: n must be even and >= 2");
  if (min_side == 0 || min_side > max_side) throw DataError("synth_dataset: invalid side range");

  SynthCorpus corpus;
  corpus.metadata = out_dir / "metadata.csv";
  corpus.image_dir = out_dir / "images";
  std::filesystem::create_directories(corpus.image_dir);

  Rng rng(seed);
  corpus.labels.assign(n, Label::bad);
  std::fill(corpus.labels.begin(), corpus.labels.begin() + static_cast<std::ptrdiff_t>(n / 2), Label::good);
  std::shuffle(corpus.labels.begin(), corpus.labels.end(), rng);

  std::uniform_int_distribution<std::size_t> side(min_side, max_side);
  const int width = static_cast<int>(std::to_string(n - 1).size());
  for (std::size_t i = 0; i < n; ++i) {
    std::string id = std::to_string(i);
    id = "synth_" + std::string(static_cast<std::size_t>(std::max(4, width)) - id.size(), '0') + id;
    const Label label = corpus.labels[i];
    const std::size_t h = side(rng), w = side(rng);
    Tensor32 img = render(rng, h, w, base_levels(rng, rule, label));
    // Base levels keep a wide margin, so this only guards the contract.
    while (synth_rule_label(rule, img) != label) img = render(rng, h, w, base_levels(rng, rule, label));
    image::write_file(corpus.image_dir / (id + ".ppm"), image::encode_ppm(img));
    corpus.records.push_back(synth_votes(rng, std::move(id), label));
  }

  std::ofstream meta(corpus.metadata, std::ios::binary | std::ios::trunc);
  if (!meta) throw DataError("cannot write " + corpus.metadata.string());
  write_metadata(meta, corpus.records);
  return corpus;
}

}  // namespace ilgnet::ava
