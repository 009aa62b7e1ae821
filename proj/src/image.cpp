#include "cmlm/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "cmlm/error.hpp"

namespace cmlm {
namespace {

constexpr int kBlock = ImageTensor::kSide / ImageTokens::kGrid;

std::uint8_t level(int i, int count) {
  return static_cast<std::uint8_t>(std::lround(i * 255.0 / (count - 1)));
}

// Nearest level index on an evenly spaced axis; ties resolve to the lower index.
int nearest_level(double v, int count) {
  int best = 0;
  double best_d = std::abs(v - level(0, count));
  for (int i = 1; i < count; ++i) {
    const double d = std::abs(v - level(i, count));
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

RgbImage decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  auto skip = [&] {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        return;
      }
    }
  };
  auto read_int = [&] {
    skip();
    long value = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos++] - '0');
      if (++digits > 7) throw Error("image", "PPM header value too large");
    }
    if (digits == 0) throw Error("image", "malformed PPM header");
    return value;
  };
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w < 1 || h < 1 || maxval != 255) throw Error("image", "unsupported PPM geometry or depth");
  ++pos;  // single whitespace before raster
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (pos + need > bytes.size()) throw Error("image", "truncated PPM raster");
  RgbImage img(static_cast<int>(w), static_cast<int>(h));
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), need, img.pixels.begin());
  return img;
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
    throw Error("image", std::string("undecodable PNG: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  if (image.width < 1 || image.height < 1 || image.width > 1 << 15 || image.height > 1 << 15) {
    png_image_free(&image);
    throw Error("image", "unsupported PNG dimensions");
  }
  RgbImage img(static_cast<int>(image.width), static_cast<int>(image.height));
  if (png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr) == 0) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error("image", "undecodable PNG: " + msg);
  }
  return img;
}

// Area-averaging resample of one axis from `src_len` to `dst_len` samples.
struct AxisWeights {
  struct Tap {
    int index;
    double weight;
  };
  std::vector<std::vector<Tap>> taps;
};

AxisWeights axis_weights(int src_len, int dst_len) {
  AxisWeights w;
  w.taps.resize(dst_len);
  const double scale = static_cast<double>(src_len) / dst_len;
  for (int o = 0; o < dst_len; ++o) {
    const double lo = o * scale;
    const double hi = (o + 1) * scale;
    const int first = static_cast<int>(std::floor(lo));
    const int last = std::min(src_len - 1, static_cast<int>(std::ceil(hi)) - 1);
    double total = 0;
    for (int i = first; i <= last; ++i) {
      const double cover = std::min<double>(hi, i + 1) - std::max<double>(lo, i);
      if (cover > 0) {
        w.taps[o].push_back({i, cover});
        total += cover;
      }
    }
    for (auto& t : w.taps[o]) t.weight /= total;
  }
  return w;
}

RgbImage resize(const RgbImage& src, int dst_w, int dst_h) {
  if (src.width == dst_w && src.height == dst_h) return src;
  const AxisWeights wx = axis_weights(src.width, dst_w);
  const AxisWeights wy = axis_weights(src.height, dst_h);
  std::vector<double> rows(static_cast<std::size_t>(src.height) * dst_w * 3, 0.0);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < dst_w; ++x) {
      double acc[3] = {0, 0, 0};
      for (const auto& t : wx.taps[x]) {
        const std::uint8_t* p = src.at(t.index, y);
        for (int c = 0; c < 3; ++c) acc[c] += t.weight * p[c];
      }
      for (int c = 0; c < 3; ++c) rows[(static_cast<std::size_t>(y) * dst_w + x) * 3 + c] = acc[c];
    }
  }
  RgbImage out(dst_w, dst_h);
  for (int y = 0; y < dst_h; ++y) {
    for (int x = 0; x < dst_w; ++x) {
      double acc[3] = {0, 0, 0};
      for (const auto& t : wy.taps[y]) {
        for (int c = 0; c < 3; ++c) {
          acc[c] += t.weight * rows[(static_cast<std::size_t>(t.index) * dst_w + x) * 3 + c];
        }
      }
      std::uint8_t* p = out.at(x, y);
      for (int c = 0; c < 3; ++c) {
        p[c] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(acc[c]), 0, 255));
      }
    }
  }
  return out;
}

}  // namespace

RgbImage::RgbImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

RgbImage decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::equal(bytes.begin(), bytes.begin() + 8, kPngMagic)) {
    return decode_png(bytes);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw Error("image", "undecodable image: unrecognized format");
}

RgbImage load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("image", "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error("image", path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

ImageTensor prepare(const RgbImage& image, PrepareMode mode, Rng& rng) {
  if (image.width < 1 || image.height < 1) throw Error("image", "empty image");
  constexpr int side = ImageTensor::kSide;
  const double scale = static_cast<double>(side) / std::min(image.width, image.height);
  const int w = std::max(side, static_cast<int>(std::lround(image.width * scale)));
  const int h = std::max(side, static_cast<int>(std::lround(image.height * scale)));
  const RgbImage resized = resize(image, w, h);
  int x0 = (w - side) / 2;
  int y0 = (h - side) / 2;
  if (mode == PrepareMode::train) {
    x0 = static_cast<int>(rng.uniform_int(0, static_cast<std::uint64_t>(w - side)));
    y0 = static_cast<int>(rng.uniform_int(0, static_cast<std::uint64_t>(h - side)));
  }
  ImageTensor out{RgbImage(side, side)};
  for (int y = 0; y < side; ++y) {
    std::copy_n(resized.at(x0, y0 + y), side * 3, out.image.at(0, y));
  }
  return out;
}

ImageTensor prepare(std::span<const std::uint8_t> bytes, PrepareMode mode, Rng& rng) {
  return prepare(decode_image(bytes), mode, rng);
}

Palette::Palette() {
  for (int r = 0; r < kRedLevels; ++r) {
    for (int g = 0; g < kGreenLevels; ++g) {
      for (int b = 0; b < kBlueLevels; ++b) {
        colors_[(r << 7) | (g << 3) | b] = {level(r, kRedLevels), level(g, kGreenLevels),
                                            level(b, kBlueLevels)};
      }
    }
  }
}

const Palette& Palette::standard() {
  static const Palette palette;
  return palette;
}

std::array<std::uint8_t, 3> Palette::color(int index) const {
  if (index < 0 || index >= kSize) {
    throw Error("image", "palette index " + std::to_string(index) + " out of range");
  }
  return colors_[index];
}

// The lattice is a product of per-channel grids, so the squared distance
// separates by channel and the lowest-index tie rule is per-channel lowest.
int Palette::nearest(double r, double g, double b) const {
  return (nearest_level(r, kRedLevels) << 7) | (nearest_level(g, kGreenLevels) << 3) |
         nearest_level(b, kBlueLevels);
}

ImageTokens PaletteCodec::tokenize(const ImageTensor& tensor) const {
  const RgbImage& img = tensor.image;
  if (img.width != ImageTensor::kSide || img.height != ImageTensor::kSide) {
    throw Error("image", "tensor must be 256x256");
  }
  const Palette& palette = Palette::standard();
  ImageTokens tokens;
  tokens.codes.reserve(ImageTokens::kCount);
  for (int by = 0; by < ImageTokens::kGrid; ++by) {
    for (int bx = 0; bx < ImageTokens::kGrid; ++bx) {
      long sum[3] = {0, 0, 0};
      for (int y = by * kBlock; y < (by + 1) * kBlock; ++y) {
        for (int x = bx * kBlock; x < (bx + 1) * kBlock; ++x) {
          const std::uint8_t* p = img.at(x, y);
          for (int c = 0; c < 3; ++c) sum[c] += p[c];
        }
      }
      constexpr double n = kBlock * kBlock;
      tokens.codes.push_back(palette.nearest(sum[0] / n, sum[1] / n, sum[2] / n));
    }
  }
  return tokens;
}

ImageTensor PaletteCodec::detokenize(const ImageTokens& tokens) const {
  if (tokens.codes.size() != ImageTokens::kCount) {
    throw Error("image", "expected 256 image tokens, got " + std::to_string(tokens.codes.size()));
  }
  const Palette& palette = Palette::standard();
  ImageTensor out{RgbImage(ImageTensor::kSide, ImageTensor::kSide)};
  for (int i = 0; i < ImageTokens::kCount; ++i) {
    const auto color = palette.color(tokens.codes[i]);
    const int bx = i % ImageTokens::kGrid;
    const int by = i / ImageTokens::kGrid;
    for (int y = by * kBlock; y < (by + 1) * kBlock; ++y) {
      for (int x = bx * kBlock; x < (bx + 1) * kBlock; ++x) {
        std::copy(color.begin(), color.end(), out.image.at(x, y));
      }
    }
  }
  return out;
}

std::string render_image_tokens(const ImageTokens& tokens, const Vocab& vocab) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.codes.size() * 2);
  for (std::size_t i = 0; i < tokens.codes.size(); ++i) {
    if (i > 0) ids.push_back(vocab.byte_token(' '));
    ids.push_back(vocab.image_token(tokens.codes[i]));
  }
  return vocab.decode(ids);
}

void embed_in_src(DomNode& img, const ImageTokens& tokens, const Vocab& vocab) {
  if (!img.is("img")) throw Error("image", "embed_in_src expects an img element");
  if (img.attr("src") == nullptr) throw Error("image", "img element has no src attribute");
  if (tokens.codes.size() != ImageTokens::kCount) {
    throw Error("image", "expected 256 image tokens, got " + std::to_string(tokens.codes.size()));
  }
  img.set_attr("src", render_image_tokens(tokens, vocab));
}

}  // namespace cmlm
