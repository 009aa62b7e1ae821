#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmlm/html.hpp"
#include "cmlm/rng.hpp"
#include "cmlm/vocab.hpp"

namespace cmlm {

// Interleaved 8-bit RGB image of arbitrary size.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0);

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// A prepared codec input: always kSide x kSide.
struct ImageTensor {
  static constexpr int kSide = 256;
  RgbImage image;
  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

// 16x16 grid of codebook indices, row-major.
struct ImageTokens {
  static constexpr int kGrid = 16;
  static constexpr int kCount = kGrid * kGrid;
  std::vector<int> codes;
  friend bool operator==(const ImageTokens&, const ImageTokens&) = default;
};

enum class PrepareMode { train, eval };

// Binary PPM (P6) and PNG are accepted.
RgbImage decode_image(std::span<const std::uint8_t> bytes);
RgbImage load_image(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);

// Shorter side resized to 256 with area averaging, then a 256x256 crop:
// rng-driven offsets in train mode, centered in eval mode.
ImageTensor prepare(const RgbImage& image, PrepareMode mode, Rng& rng);
ImageTensor prepare(std::span<const std::uint8_t> bytes, PrepareMode mode, Rng& rng);

// 1024-color lattice: 8 red levels x 16 green levels x 8 blue levels,
// index = (r << 7) | (g << 3) | b, levels evenly spaced over [0, 255].
class Palette {
 public:
  static constexpr int kSize = 1024;
  static constexpr int kRedLevels = 8;
  static constexpr int kGreenLevels = 16;
  static constexpr int kBlueLevels = 8;

  static const Palette& standard();

  std::array<std::uint8_t, 3> color(int index) const;
  // Nearest color by squared Euclidean distance; ties go to the lowest index.
  int nearest(double r, double g, double b) const;

 private:
  Palette();
  std::array<std::array<std::uint8_t, 3>, kSize> colors_;
};

class ImageCodec {
 public:
  virtual ~ImageCodec() = default;
  virtual int codebook_size() const = 0;
  virtual ImageTokens tokenize(const ImageTensor& tensor) const = 0;
  virtual ImageTensor detokenize(const ImageTokens& tokens) const = 0;
};

// Stand-in for a learned VQ codec: each 16x16-pixel block is replaced by the
// palette entry nearest to its mean color.
class PaletteCodec final : public ImageCodec {
 public:
  int codebook_size() const override { return Palette::kSize; }
  ImageTokens tokenize(const ImageTensor& tensor) const override;
  ImageTensor detokenize(const ImageTokens& tokens) const override;
};

// "IMG{k} IMG{k} ..." spelling of the tokens, single-space separated.
std::string render_image_tokens(const ImageTokens& tokens, const Vocab& vocab);
// Rewrites the `src` attribute of an `img` element with the rendered tokens.
void embed_in_src(DomNode& img, const ImageTokens& tokens, const Vocab& vocab);

}  // namespace cmlm
