#include <doctest.h>

#include <limits>

#include "cmlm/html.hpp"
#include "cmlm/image.hpp"
#include "cmlm/rng.hpp"

using namespace cmlm;

namespace {

RgbImage random_image(int w, int h, Rng& rng) {
  RgbImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

// Scans all 1024 colors.
int brute_force_nearest(double r, double g, double b) {
  const Palette& palette = Palette::standard();
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < Palette::kSize; ++i) {
    const auto c = palette.color(i);
    const double d = (r - c[0]) * (r - c[0]) + (g - c[1]) * (g - c[1]) + (b - c[2]) * (b - c[2]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

// 2x1 PNG: a red pixel then a blue pixel.
const std::uint8_t kTinyPng[] = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00,
    0x00, 0x02, 0x00, 0x00, 0x00, 0x01, 0x08, 0x02, 0x00, 0x00, 0x00, 0x7b, 0x40, 0xe8, 0xdd, 0x00, 0x00, 0x00,
    0x0f, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0xf8, 0xcf, 0xc0, 0xc0, 0xc0, 0xf0, 0x1f, 0x00, 0x07, 0x00,
    0x01, 0xff, 0x7e, 0x08, 0xb1, 0xd0, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};

}  // namespace

TEST_CASE("decode PPM and PNG") {
  Rng rng(1);
  const RgbImage img = random_image(7, 5, rng);
  CHECK(decode_image(encode_ppm(img)) == img);

  const RgbImage png = decode_image(kTinyPng);
  REQUIRE(png.width == 2);
  REQUIRE(png.height == 1);
  CHECK(png.pixels == std::vector<std::uint8_t>{255, 0, 0, 0, 0, 255});

  const std::vector<std::uint8_t> junk = {'n', 'o', 'p', 'e'};
  CHECK_THROWS_AS(decode_image(junk), Error);
  std::vector<std::uint8_t> truncated = encode_ppm(img);
  truncated.resize(truncated.size() - 10);
  CHECK_THROWS_AS(decode_image(truncated), Error);
}

TEST_CASE("prepare crops and resizes") {
  Rng rng(2);
  const RgbImage square = random_image(256, 256, rng);
  CHECK(prepare(square, PrepareMode::eval, rng).image == square);

  const RgbImage gray(512, 512, 128);
  const ImageTensor t = prepare(gray, PrepareMode::eval, rng);
  CHECK(t.image == RgbImage(256, 256, 128));

  // Already at target scale: the train crop is the input window at the
  // offsets the seeded generator produces.
  const RgbImage wide = random_image(384, 256, rng);
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    Rng oracle(seed);
    const int x0 = static_cast<int>(oracle.uniform_int(0, 128));
    const int y0 = static_cast<int>(oracle.uniform_int(0, 0));
    Rng r(seed);
    const ImageTensor crop = prepare(wide, PrepareMode::train, r);
    bool same = true;
    for (int y = 0; y < 256 && same; ++y) {
      for (int x = 0; x < 256 && same; ++x) {
        same = std::equal(crop.image.at(x, y), crop.image.at(x, y) + 3, wide.at(x0 + x, y0 + y));
      }
    }
    CHECK(same);
  }

  const RgbImage odd = random_image(300, 200, rng);
  Rng a(9), b(9);
  CHECK(prepare(odd, PrepareMode::train, a) == prepare(odd, PrepareMode::train, b));
  CHECK(prepare(odd, PrepareMode::eval, a).image.width == 256);
  CHECK(prepare(random_image(1, 1, rng), PrepareMode::eval, a).image.height == 256);
}

TEST_CASE("palette") {
  const Palette& p = Palette::standard();
  CHECK(p.color(0) == std::array<std::uint8_t, 3>{0, 0, 0});
  CHECK(p.color(1023) == std::array<std::uint8_t, 3>{255, 255, 255});
  CHECK(p.color((1 << 7) | (1 << 3) | 1) == std::array<std::uint8_t, 3>{36, 17, 36});
  CHECK_THROWS_AS(p.color(1024), Error);
  Rng rng(11);
  for (int i = 0; i < 20000; ++i) {
    // Include exact midpoints to exercise the tie rule.
    const double r = i % 2 ? rng.uniform_int(0, 510) / 2.0 : rng.uniform() * 255;
    const double g = rng.uniform_int(0, 510) / 2.0;
    const double b = rng.uniform() * 255;
    REQUIRE(p.nearest(r, g, b) == brute_force_nearest(r, g, b));
  }
}

TEST_CASE("palette codec") {
  const PaletteCodec codec;
  CHECK(codec.codebook_size() == 1024);
  const ImageTokens black = codec.tokenize({RgbImage(256, 256, 0)});
  CHECK(black.codes == std::vector<int>(256, 0));

  Rng rng(5);
  ImageTokens distinct;
  for (int i = 0; i < 256; ++i) distinct.codes.push_back(i * 4 + static_cast<int>(rng.uniform_int(0, 3)));
  const ImageTensor blocks = codec.detokenize(distinct);
  CHECK(codec.tokenize(blocks) == distinct);
  CHECK(codec.detokenize(codec.tokenize(blocks)) == blocks);

  // Random image against a per-block brute-force search.
  const RgbImage img = random_image(256, 256, rng);
  const ImageTokens tokens = codec.tokenize({img});
  REQUIRE(tokens.codes.size() == 256);
  for (int by = 0; by < 16; ++by) {
    for (int bx = 0; bx < 16; ++bx) {
      double sum[3] = {0, 0, 0};
      for (int y = by * 16; y < by * 16 + 16; ++y) {
        for (int x = bx * 16; x < bx * 16 + 16; ++x) {
          for (int c = 0; c < 3; ++c) sum[c] += img.at(x, y)[c];
        }
      }
      CHECK(tokens.codes[by * 16 + bx] == brute_force_nearest(sum[0] / 256, sum[1] / 256, sum[2] / 256));
    }
  }

  // Arbitrary tokens: blockwise palette lookup.
  ImageTokens arbitrary;
  for (int i = 0; i < 256; ++i) arbitrary.codes.push_back(static_cast<int>(rng.uniform_int(0, 1023)));
  const ImageTensor pic = codec.detokenize(arbitrary);
  for (int i = 0; i < 256; ++i) {
    const auto c = Palette::standard().color(arbitrary.codes[i]);
    CHECK(std::equal(c.begin(), c.end(), pic.image.at((i % 16) * 16 + 7, (i / 16) * 16 + 3)));
  }
  CHECK(codec.tokenize(pic) == arbitrary);

  ImageTokens bad = arbitrary;
  bad.codes[17] = 1024;
  CHECK_THROWS_AS(codec.detokenize(bad), Error);
}

TEST_CASE("embed_in_src") {
  const Vocab vocab;
  ImageTokens zeros{std::vector<int>(256, 0)};
  DomNode img = parse_dom("<img alt=\"a\" src=\"x.png\">").children[0];
  embed_in_src(img, zeros, vocab);
  std::string expected = "IMG0";
  for (int i = 1; i < 256; ++i) expected += " IMG0";
  CHECK(*img.attr("src") == expected);

  ImageTokens mixed;
  for (int i = 0; i < 256; ++i) mixed.codes.push_back((i * 37) % 1024);
  embed_in_src(img, mixed, vocab);
  const auto ids = vocab.encode(*img.attr("src"));
  REQUIRE(ids.size() == 511);
  for (int i = 0; i < 256; ++i) CHECK(vocab.image_index(ids[2 * i]) == mixed.codes[i]);

  DomNode no_src = parse_dom("<img alt=\"a\">").children[0];
  CHECK_THROWS_AS(embed_in_src(no_src, zeros, vocab), Error);
  DomNode para = parse_dom("<p src=\"x\">t</p>").children[0];
  CHECK_THROWS_AS(embed_in_src(para, zeros, vocab), Error);
  CHECK_THROWS_AS(embed_in_src(img, ImageTokens{std::vector<int>(255, 0)}, vocab), Error);
}
