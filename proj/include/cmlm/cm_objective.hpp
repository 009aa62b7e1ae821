#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmlm/rng.hpp"
#include "cmlm/vocab.hpp"

namespace cmlm {

// A document before transformation: no sentinels, no <eod>.
struct Document {
  std::string doc_id;
  std::vector<TokenId> tokens;
  // Half-open token ranges covering one embedded image each: 256 image tokens
  // and the single-space separators between them.
  std::vector<std::pair<std::size_t, std::size_t>> image_regions;

  std::size_t size() const noexcept { return tokens.size(); }
};

// Validates the token content and finds image regions.
Document make_document(const Vocab& vocab, std::string doc_id, std::vector<TokenId> tokens);

struct MaskSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  std::size_t length() const noexcept { return end - start; }
  bool intersects(const MaskSpan& o) const noexcept { return start < o.end && o.start < end; }
  friend bool operator==(const MaskSpan&, const MaskSpan&) = default;
};

// `requested` is the sampled mask count; `spans` may hold fewer when the
// document is too small to place them all.
struct MaskPlan {
  int requested = 0;
  std::vector<MaskSpan> spans;

  std::size_t count() const noexcept { return spans.size(); }
  nlohmann::ordered_json to_json() const;
  friend bool operator==(const MaskPlan&, const MaskPlan&) = default;
};

struct TransformedSequence {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> loss_weights;
  MaskPlan plan;
  std::size_t original_length = 0;
};

inline constexpr int kMaxMasks = 16;
inline constexpr int kSpanAttempts = 100;

// Clamp(Poisson(1), 1, 16).
int sample_mask_count(Rng& rng);

// Sequential rejection sampling of non-intersecting, non-empty spans.
MaskPlan sample_spans(std::size_t length, int count, Rng& rng);
MaskPlan sample_plan(std::size_t length, Rng& rng);

// Throws unless `plan` is sorted, disjoint, non-empty and inside [0, length).
void validate_plan(const MaskPlan& plan, std::size_t length);

// Body with span k replaced by <mask:k>, then <mask:k> + span k for each k,
// then <eod>.
TransformedSequence transform(const Vocab& vocab, std::span<const TokenId> document,
                              const MaskPlan& plan);
// Plain left-to-right sequence: the document followed by <eod>.
TransformedSequence causal_sequence(const Vocab& vocab, std::span<const TokenId> document);

// Splices every tail span back over its body sentinel.
std::vector<TokenId> invert(const Vocab& vocab, std::span<const TokenId> transformed);

// 0 at every sentinel position, 1 elsewhere (including <eod>).
std::vector<std::uint8_t> loss_weights(const Vocab& vocab, std::span<const TokenId> transformed);

}  // namespace cmlm
