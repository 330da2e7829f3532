#include "ilgnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "ilgnet/error.hpp"

namespace ilgnet::image {
namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  // Skips whitespace and '#' comments, then reads an unsigned decimal.
  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) throw DataError(std::string("ppm: ") + what + " too large");
    }
    if (digits == 0) throw DataError(std::string("ppm: missing ") + what);
    return value;
  }

  // Exactly one whitespace byte separates the header from the raster.
  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw DataError("ppm: header must end with whitespace");
    ++pos_;
  }

  std::size_t position() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

Bytes header(const char* magic, std::size_t w, std::size_t h) {
  const std::string text = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  return Bytes(text.begin(), text.end());
}

}  // namespace

Tensor32 decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw DataError("ppm: bad magic (expected P6)");
  HeaderReader reader(bytes);
  const std::size_t width = reader.number("width");
  const std::size_t height = reader.number("height");
  const std::size_t maxval = reader.number("maxval");
  reader.single_whitespace();
  if (width == 0 || height == 0) throw DataError("ppm: zero image extent");
  if (maxval != 255) throw DataError("ppm: maxval must be 255, got " + std::to_string(maxval));

  const std::size_t plane = width * height;
  const std::size_t offset = reader.position();
  if (bytes.size() - offset < 3 * plane) {
    throw DataError("ppm: truncated payload (" + std::to_string(bytes.size() - offset) + " of " +
                    std::to_string(3 * plane) + " bytes)");
  }
  Tensor32 out({1, 3, height, width});
  const std::uint8_t* px = bytes.data() + offset;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = px[3 * i + c];
  }
  return out;
}

Bytes encode_ppm(const Tensor32& image) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw ShapeError("encode_ppm expects (1,3,H,W), got " + to_string(image.shape()));
  }
  const std::size_t h = image.dim(2), w = image.dim(3), plane = h * w;
  Bytes out = header("P6", w, h);
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.push_back(to_byte(image[c * plane + i]));
  }
  return out;
}

Bytes encode_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height) throw ShapeError("encode_pgm: pixel count does not match extents");
  Bytes out = header("P5", width, height);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Tensor32 load_ppm(const std::filesystem::path& path) {
  Bytes bytes = read_file(path);
  try {
    return decode_ppm(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Tensor32 resize_bilinear(const Tensor32& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 4) throw ShapeError("resize expects (N,C,H,W)");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize: output side must be >= 1");
  const std::size_t planes = image.dim(0) * image.dim(1), h = image.dim(2), w = image.dim(3);

  struct Tap1D {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap1D> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double src = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(src);
      t[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);

  Tensor32 out({image.dim(0), image.dim(1), out_h, out_w});
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = image.raw() + p * h * w;
    float* dst = out.raw() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& b = tx[x];
        const double top = src[a.lo * w + b.lo] * (1 - b.frac) + src[a.lo * w + b.hi] * b.frac;
        const double bottom = src[a.hi * w + b.lo] * (1 - b.frac) + src[a.hi * w + b.hi] * b.frac;
        dst[y * out_w + x] = static_cast<float>(top * (1 - a.frac) + bottom * a.frac);
      }
    }
  }
  return out;
}

Tensor32 preprocess(const Tensor32& image, const ChannelMeans& means, std::size_t side) {
  if (image.rank() != 4 || image.dim(1) != 3) throw ShapeError("preprocess expects (N,3,H,W)");
  Tensor32 out = resize_bilinear(image, side);
  const std::size_t plane = side * side;
  for (std::size_t n = 0; n < out.dim(0); ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      float* p = out.raw() + (n * 3 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] -= means[c];
    }
  }
  return out;
}

ChannelMeans compute_channel_means(std::span<const Tensor32> images) {
  if (images.empty()) throw DataError("compute_channel_means: no images");
  std::array<double, 3> sums{};
  std::size_t pixels = 0;
  for (const auto& img : images) {
    if (img.rank() != 4 || img.dim(1) != 3) throw ShapeError("compute_channel_means expects (N,3,H,W) images");
    const std::size_t plane = img.dim(2) * img.dim(3);
    for (std::size_t n = 0; n < img.dim(0); ++n) {
      for (std::size_t c = 0; c < 3; ++c) {
        const float* p = img.raw() + (n * 3 + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sums[c] += p[i];
      }
    }
    pixels += img.dim(0) * plane;
  }
  return {static_cast<float>(sums[0] / static_cast<double>(pixels)), static_cast<float>(sums[1] / static_cast<double>(pixels)),
          static_cast<float>(sums[2] / static_cast<double>(pixels))};
}

}  // namespace ilgnet::image
