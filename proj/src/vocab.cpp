#include "cmlm/vocab.hpp"

#include <charconv>
#include <cstdio>

namespace cmlm {
namespace {

constexpr std::string_view kMaskPrefix = "<mask:";
constexpr std::string_view kEod = "<eod>";
constexpr std::string_view kImagePrefix = "IMG";

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Parses a run of decimal digits starting at `pos`. Returns the number of
// digits consumed (0 if none) and stores the value, saturating on overflow.
std::size_t parse_digits(std::string_view text, std::size_t pos, long long& value) {
  std::size_t end = pos;
  while (end < text.size() && is_digit(text[end])) ++end;
  value = 0;
  for (std::size_t i = pos; i < end; ++i) {
    if (value > 1'000'000'000LL) {
      value = 1'000'000'000LL;
      continue;
    }
    value = value * 10 + (text[i] - '0');
  }
  return end - pos;
}

}  // namespace

EncodeError::EncodeError(std::size_t position, const std::string& message)
    : Error("vocab", message + " at byte " + std::to_string(position)), position_(position) {}

Vocab::Vocab(int image_vocab_size) : image_vocab_size_(image_vocab_size) {
  if (image_vocab_size < 1) throw Error("vocab", "image_vocab_size must be positive");
}

TokenId Vocab::image_token(int k) const {
  if (k < 0 || k >= image_vocab_size_) {
    throw Error("vocab", "image token index " + std::to_string(k) + " out of range");
  }
  return kTextSize + k;
}

TokenId Vocab::sentinel(int k) const {
  if (k < 0 || k >= kNumSentinels) {
    throw Error("vocab", "sentinel index " + std::to_string(k) + " out of range");
  }
  return sentinel_base() + k;
}

TokenClass Vocab::classify(TokenId id) const {
  if (!valid(id)) throw Error("vocab", "unknown token id " + std::to_string(id));
  if (id < kTextSize) return TokenClass::text;
  if (id < sentinel_base()) return TokenClass::image;
  if (id < eod()) return TokenClass::sentinel;
  return TokenClass::eod;
}

int Vocab::sentinel_index(TokenId id) const noexcept {
  return id >= sentinel_base() && id < eod() ? id - sentinel_base() : -1;
}

int Vocab::image_index(TokenId id) const noexcept {
  return id >= kTextSize && id < sentinel_base() ? id - kTextSize : -1;
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const std::string_view rest = text.substr(i);
    if (rest.starts_with(kMaskPrefix)) {
      const std::size_t digits_at = i + kMaskPrefix.size();
      long long k = 0;
      const std::size_t n = parse_digits(text, digits_at, k);
      if (n > 0 && digits_at + n < text.size() && text[digits_at + n] == '>') {
        if (k >= kNumSentinels || (n > 1 && text[digits_at] == '0')) {
          throw EncodeError(i, "malformed sentinel '" +
                                   std::string(text.substr(i, kMaskPrefix.size() + n + 1)) + "'");
        }
        out.push_back(sentinel(static_cast<int>(k)));
        i = digits_at + n + 1;
        continue;
      }
    } else if (rest.starts_with(kEod)) {
      out.push_back(eod());
      i += kEod.size();
      continue;
    } else if (rest.starts_with(kImagePrefix)) {
      const std::size_t digits_at = i + kImagePrefix.size();
      long long k = 0;
      const std::size_t n = parse_digits(text, digits_at, k);
      if (n > 0) {
        if (k >= image_vocab_size_ || (n > 1 && text[digits_at] == '0')) {
          throw EncodeError(i, "malformed image token '" +
                                   std::string(text.substr(i, kImagePrefix.size() + n)) + "'");
        }
        out.push_back(image_token(static_cast<int>(k)));
        i = digits_at + n;
        continue;
      }
    }
    out.push_back(byte_token(static_cast<std::uint8_t>(text[i])));
    ++i;
  }
  return out;
}

std::string Vocab::decode(std::span<const TokenId> tokens) const {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId id : tokens) {
    switch (classify(id)) {
      case TokenClass::text:
        out.push_back(static_cast<char>(id));
        break;
      case TokenClass::image:
        out += kImagePrefix;
        out += std::to_string(image_index(id));
        break;
      case TokenClass::sentinel:
        out += kMaskPrefix;
        out += std::to_string(sentinel_index(id));
        out.push_back('>');
        break;
      case TokenClass::eod:
        out += kEod;
        break;
    }
  }
  return out;
}

std::string Vocab::render(TokenId id) const {
  if (classify(id) == TokenClass::text && id >= 0x80) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "<0x%02X>", static_cast<unsigned>(id));
    return buf;
  }
  const TokenId one[1] = {id};
  return decode(one);
}

TokenId Vocab::parse_rendered(std::string_view text) const {
  if (text.size() == 1) {
    const auto b = static_cast<std::uint8_t>(text[0]);
    if (b < 0x80) return byte_token(b);
  }
  if (text.size() == 6 && text.starts_with("<0x") && text.back() == '>') {
    unsigned value = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + 3, text.data() + 5, value, 16);
    if (ec == std::errc() && ptr == text.data() + 5 && value >= 0x80 && value <= 0xFF) {
      return byte_token(static_cast<std::uint8_t>(value));
    }
  }
  std::vector<TokenId> ids;
  try {
    ids = encode(text);
  } catch (const EncodeError&) {
    ids.clear();
  }
  if (ids.size() != 1 || classify(ids[0]) == TokenClass::text || render(ids[0]) != text) {
    throw Error("vocab", "invalid rendered token '" + std::string(text) + "'");
  }
  return ids[0];
}

std::vector<std::string> Vocab::render_all(std::span<const TokenId> tokens) const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (TokenId id : tokens) out.push_back(render(id));
  return out;
}

std::vector<TokenId> Vocab::parse_all(std::span<const std::string> rendered) const {
  std::vector<TokenId> out;
  out.reserve(rendered.size());
  for (const auto& r : rendered) out.push_back(parse_rendered(r));
  return out;
}

}  // namespace cmlm
