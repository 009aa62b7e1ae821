#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmlm/error.hpp"

namespace cmlm {

using TokenId = std::int32_t;

enum class TokenClass { text, image, sentinel, eod };

// Raised by Vocab::encode on malformed special-token text.
class EncodeError : public Error {
 public:
  EncodeError(std::size_t position, const std::string& message);
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

// Token space: 256 byte tokens, then image tokens IMG0..IMG{n-1}, then the
// sixteen sentinels <mask:0>..<mask:15>, then <eod>. Each class occupies a
// contiguous id range.
class Vocab {
 public:
  static constexpr int kTextSize = 256;
  static constexpr int kNumSentinels = 16;
  static constexpr int kDefaultImageVocabSize = 1024;

  explicit Vocab(int image_vocab_size = kDefaultImageVocabSize);

  int image_vocab_size() const noexcept { return image_vocab_size_; }
  int size() const noexcept { return kTextSize + image_vocab_size_ + kNumSentinels + 1; }

  TokenId byte_token(std::uint8_t b) const noexcept { return b; }
  TokenId image_token(int k) const;
  TokenId sentinel(int k) const;
  TokenId eod() const noexcept { return kTextSize + image_vocab_size_ + kNumSentinels; }

  bool valid(TokenId id) const noexcept { return id >= 0 && id < size(); }
  TokenClass classify(TokenId id) const;
  bool is_special(TokenId id) const noexcept { return id >= sentinel_base() && id < size(); }
  // -1 when `id` is not of the requested class.
  int sentinel_index(TokenId id) const noexcept;
  int image_index(TokenId id) const noexcept;

  // Bytes to ids. Recognizes <mask:K>, <eod> and IMG{k} as single tokens.
  std::vector<TokenId> encode(std::string_view text) const;
  // Exact inverse of encode on its image.
  std::string decode(std::span<const TokenId> tokens) const;

  // Per-token spelling used in record files. Byte tokens >= 0x80 are spelled
  // <0xHH> so that every rendered token is valid UTF-8.
  std::string render(TokenId id) const;
  TokenId parse_rendered(std::string_view text) const;
  std::vector<std::string> render_all(std::span<const TokenId> tokens) const;
  std::vector<TokenId> parse_all(std::span<const std::string> rendered) const;

 private:
  TokenId sentinel_base() const noexcept { return kTextSize + image_vocab_size_; }

  int image_vocab_size_;
};

}  // namespace cmlm
