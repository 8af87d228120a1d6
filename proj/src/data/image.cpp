// SPDX-License-Identifier: Apache-2.0
#include "stagewise/data/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "stagewise/errors.hpp"

namespace stagewise::data {

namespace {

void require_image(const Tensor& image, const char* op) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw ShapeError(std::string(op) + ": expected a 3×H×W image, got " + shape_str(image.shape()));
  }
}

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : bytes_(b) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  long number(const char* what) {
    skip_space_and_comments();
    long v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1L << 24)) throw DecodeError(std::string("ppm: ") + what + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw DecodeError(std::string("ppm: malformed header, missing ") + what);
    return v;
  }

  std::size_t pos_ = 0;
  std::span<const std::uint8_t> bytes_;
};

}  // namespace

Tensor decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngSig[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(std::begin(kPngSig), std::end(kPngSig), bytes.begin())) {
    throw DecodeError("png images are not supported; convert to binary ppm (P6)");
  }
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw DecodeError("ppm: malformed header, expected magic P6");
  }
  HeaderReader r(bytes);
  r.pos_ = 2;
  const long w = r.number("width");
  const long h = r.number("height");
  const long maxval = r.number("maxval");
  if (w <= 0 || h <= 0) throw DecodeError("ppm: image dimensions must be positive");
  if (maxval != 255) throw DecodeError("ppm: only maxval 255 is supported, got " + std::to_string(maxval));
  if (r.pos_ >= bytes.size() || !std::isspace(bytes[r.pos_])) {
    throw DecodeError("ppm: malformed header, missing separator before pixel data");
  }
  ++r.pos_;
  const auto plane = static_cast<std::size_t>(w * h);
  if (bytes.size() - r.pos_ < 3 * plane) {
    throw DecodeError("ppm: truncated payload, expected " + std::to_string(3 * plane) + " bytes, found " +
                      std::to_string(bytes.size() - r.pos_));
  }
  Tensor img({3, h, w});
  auto d = img.data();
  const std::uint8_t* px = bytes.data() + r.pos_;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) d[c * plane + i] = static_cast<float>(px[3 * i + c]) / 255.0F;
  }
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  require_image(image, "encode_ppm");
  const auto h = image.dim(1);
  const auto w = image.dim(2);
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto plane = static_cast<std::size_t>(w * h);
  out.reserve(out.size() + 3 * plane);
  auto d = image.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(d[c * plane + i], 0.0F, 1.0F);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0F)));
    }
  }
  return out;
}

Tensor read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError(path.string() + ": cannot open image");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path.string() + ": cannot write image");
}

namespace {

struct Tap {
  std::int64_t lo, hi;
  float frac;
};

std::vector<Tap> taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(src));
    const auto hi = std::min(lo + 1, in - 1);
    t[static_cast<std::size_t>(i)] = {lo, hi, static_cast<float>(src - static_cast<double>(lo))};
  }
  return t;
}

// Stays inside [min(a, b), max(a, b)] despite rounding.
inline float lerp_clamped(float a, float b, float f) {
  const float v = a + (b - a) * f;
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, int height, int width) {
  require_image(image, "resize_bilinear");
  if (height < 1 || width < 1) throw ConfigError("resize_bilinear: target size must be >= 1");
  const auto ih = image.dim(1);
  const auto iw = image.dim(2);
  if (ih == height && iw == width) return image.clone();
  const auto ty = taps(ih, height);
  const auto tx = taps(iw, width);
  Tensor out({3, height, width});
  auto src = image.data();
  auto dst = out.data();
  for (std::int64_t c = 0; c < 3; ++c) {
    const float* s = src.data() + c * ih * iw;
    float* o = dst.data() + c * height * width;
    for (int y = 0; y < height; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      const float* r0 = s + a.lo * iw;
      const float* r1 = s + a.hi * iw;
      for (int x = 0; x < width; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const float top = lerp_clamped(r0[b.lo], r0[b.hi], b.frac);
        const float bottom = lerp_clamped(r1[b.lo], r1[b.hi], b.frac);
        o[y * width + x] = lerp_clamped(top, bottom, a.frac);
      }
    }
  }
  return out;
}

void NormalizationStats::validate() const {
  for (float s : std) {
    if (!(s > 0.0F)) throw ConfigError("normalization std must be positive");
  }
}

Tensor normalize(const Tensor& image, const NormalizationStats& stats) {
  require_image(image, "normalize");
  stats.validate();
  Tensor out(image.shape());
  const auto plane = static_cast<std::size_t>(image.dim(1) * image.dim(2));
  auto s = image.data();
  auto d = out.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      d[c * plane + i] = (s[c * plane + i] - stats.mean[c]) / stats.std[c];
    }
  }
  return out;
}

Tensor denormalize(const Tensor& image, const NormalizationStats& stats) {
  require_image(image, "denormalize");
  stats.validate();
  Tensor out(image.shape());
  const auto plane = static_cast<std::size_t>(image.dim(1) * image.dim(2));
  auto s = image.data();
  auto d = out.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      d[c * plane + i] = s[c * plane + i] * stats.std[c] + stats.mean[c];
    }
  }
  return out;
}

}  // namespace stagewise::data
