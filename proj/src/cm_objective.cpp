#include "cmlm/cm_objective.hpp"

#include <algorithm>

#include "cmlm/error.hpp"

namespace cmlm {

Document make_document(const Vocab& vocab, std::string doc_id, std::vector<TokenId> tokens) {
  Document doc{std::move(doc_id), std::move(tokens), {}};
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    const TokenId t = doc.tokens[i];
    if (!vocab.valid(t)) throw Error("cm_objective", "unknown token id " + std::to_string(t));
    if (vocab.is_special(t)) {
      throw Error("cm_objective", "document '" + doc.doc_id + "' contains special token " +
                                      vocab.render(t) + " at " + std::to_string(i));
    }
  }
  // An image region is a maximal run "IMG IMG ... IMG" joined by single
  // spaces holding exactly 256 image tokens.
  const TokenId space = vocab.byte_token(' ');
  std::size_t i = 0;
  while (i < doc.tokens.size()) {
    if (vocab.image_index(doc.tokens[i]) < 0) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    std::size_t count = 1;
    std::size_t end = i + 1;
    while (end + 1 < doc.tokens.size() && doc.tokens[end] == space &&
           vocab.image_index(doc.tokens[end + 1]) >= 0) {
      end += 2;
      ++count;
    }
    if (count == 256) doc.image_regions.emplace_back(start, end);
    i = end;
  }
  return doc;
}

nlohmann::ordered_json MaskPlan::to_json() const {
  nlohmann::ordered_json j;
  j["n"] = requested;
  auto spans_json = nlohmann::ordered_json::array();
  for (const auto& s : spans) spans_json.push_back({s.start, s.end});
  j["spans"] = spans_json;
  return j;
}

int sample_mask_count(Rng& rng) {
  return std::clamp(rng.poisson(1.0), 1, kMaxMasks);
}

MaskPlan sample_spans(std::size_t length, int count, Rng& rng) {
  if (length == 0) throw Error("cm_objective", "cannot mask an empty document");
  if (count < 1 || count > kMaxMasks) {
    throw Error("cm_objective", "mask count " + std::to_string(count) + " outside [1, 16]");
  }
  MaskPlan plan;
  plan.requested = count;
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kSpanAttempts && !placed; ++attempt) {
      std::size_t a = rng.uniform_int(0, length);
      std::size_t b = rng.uniform_int(0, length);
      if (a > b) std::swap(a, b);
      if (a == b) continue;
      const MaskSpan candidate{a, b};
      if (std::none_of(plan.spans.begin(), plan.spans.end(),
                       [&](const MaskSpan& s) { return s.intersects(candidate); })) {
        plan.spans.push_back(candidate);
        placed = true;
      }
    }
    if (!placed) break;
  }
  if (plan.spans.empty()) {
    // Every draw was empty; fall back to a single-token span.
    const std::size_t a = rng.uniform_int(0, length - 1);
    plan.spans.push_back({a, a + 1});
  }
  std::sort(plan.spans.begin(), plan.spans.end(),
            [](const MaskSpan& x, const MaskSpan& y) { return x.start < y.start; });
  return plan;
}

MaskPlan sample_plan(std::size_t length, Rng& rng) {
  const int n = sample_mask_count(rng);
  return sample_spans(length, n, rng);
}

void validate_plan(const MaskPlan& plan, std::size_t length) {
  if (plan.spans.size() > static_cast<std::size_t>(kMaxMasks)) {
    throw Error("cm_objective", "plan has more than 16 spans");
  }
  for (std::size_t k = 0; k < plan.spans.size(); ++k) {
    const MaskSpan& s = plan.spans[k];
    if (s.start >= s.end || s.end > length) {
      throw Error("cm_objective", "span " + std::to_string(k) + " [" + std::to_string(s.start) +
                                      ", " + std::to_string(s.end) + ") invalid for length " +
                                      std::to_string(length));
    }
    if (k > 0 && plan.spans[k - 1].end > s.start) {
      throw Error("cm_objective", "spans " + std::to_string(k - 1) + " and " + std::to_string(k) +
                                      " overlap or are unsorted");
    }
  }
}

TransformedSequence transform(const Vocab& vocab, std::span<const TokenId> document,
                              const MaskPlan& plan) {
  validate_plan(plan, document.size());
  for (TokenId t : document) {
    if (!vocab.valid(t) || vocab.is_special(t)) {
      throw Error("cm_objective", "document contains a special or unknown token");
    }
  }
  TransformedSequence out;
  out.plan = plan;
  out.original_length = document.size();
  out.tokens.reserve(document.size() + 2 * plan.count() + 1);
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < plan.count(); ++k) {
    const MaskSpan& s = plan.spans[k];
    out.tokens.insert(out.tokens.end(), document.begin() + cursor, document.begin() + s.start);
    out.tokens.push_back(vocab.sentinel(static_cast<int>(k)));
    cursor = s.end;
  }
  out.tokens.insert(out.tokens.end(), document.begin() + cursor, document.end());
  for (std::size_t k = 0; k < plan.count(); ++k) {
    const MaskSpan& s = plan.spans[k];
    out.tokens.push_back(vocab.sentinel(static_cast<int>(k)));
    out.tokens.insert(out.tokens.end(), document.begin() + s.start, document.begin() + s.end);
  }
  out.tokens.push_back(vocab.eod());
  out.loss_weights = loss_weights(vocab, out.tokens);
  return out;
}

TransformedSequence causal_sequence(const Vocab& vocab, std::span<const TokenId> document) {
  return transform(vocab, document, MaskPlan{});
}

std::vector<TokenId> invert(const Vocab& vocab, std::span<const TokenId> transformed) {
  if (transformed.empty() || transformed.back() != vocab.eod()) {
    throw Error("cm_objective", "transformed sequence does not end with <eod>");
  }
  const std::span<const TokenId> content = transformed.first(transformed.size() - 1);
  // First occurrence of each sentinel belongs to the body, the second to the
  // tail. The tail starts at the second <mask:0>.
  std::vector<std::size_t> body_pos;
  std::size_t tail_start = content.size();
  for (std::size_t i = 0; i < content.size(); ++i) {
    const TokenId t = content[i];
    if (t == vocab.eod()) throw Error("cm_objective", "<eod> before the end of the sequence");
    const int k = vocab.sentinel_index(t);
    if (k < 0) continue;
    if (k == 0 && !body_pos.empty()) {
      tail_start = i;
      break;
    }
    if (k != static_cast<int>(body_pos.size())) {
      throw Error("cm_objective", "body sentinel <mask:" + std::to_string(k) +
                                      "> out of order (expected <mask:" +
                                      std::to_string(body_pos.size()) + ">)");
    }
    body_pos.push_back(i);
  }
  // Tail spans, in ascending sentinel order.
  std::vector<std::span<const TokenId>> spans;
  std::size_t i = tail_start;
  while (i < content.size()) {
    const int k = vocab.sentinel_index(content[i]);
    if (k != static_cast<int>(spans.size())) {
      throw Error("cm_objective", k < 0 ? "tail does not start with a sentinel"
                                        : "tail sentinel <mask:" + std::to_string(k) +
                                              "> has no body counterpart or is out of order");
    }
    if (spans.size() >= body_pos.size()) {
      throw Error("cm_objective",
                  "dangling tail sentinel <mask:" + std::to_string(k) + "> without body counterpart");
    }
    std::size_t j = i + 1;
    while (j < content.size() && vocab.sentinel_index(content[j]) < 0) ++j;
    spans.push_back(content.subspan(i + 1, j - i - 1));
    i = j;
  }
  if (spans.size() < body_pos.size()) {
    throw Error("cm_objective", "dangling body sentinel <mask:" + std::to_string(spans.size()) +
                                    "> without tail counterpart");
  }
  std::vector<TokenId> out;
  out.reserve(content.size());
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < body_pos.size(); ++k) {
    out.insert(out.end(), content.begin() + cursor, content.begin() + body_pos[k]);
    out.insert(out.end(), spans[k].begin(), spans[k].end());
    cursor = body_pos[k] + 1;
  }
  out.insert(out.end(), content.begin() + cursor, content.begin() + tail_start);
  return out;
}

std::vector<std::uint8_t> loss_weights(const Vocab& vocab, std::span<const TokenId> transformed) {
  std::vector<std::uint8_t> w(transformed.size(), 1);
  for (std::size_t i = 0; i < transformed.size(); ++i) {
    if (vocab.sentinel_index(transformed[i]) >= 0) w[i] = 0;
  }
  return w;
}

}  // namespace cmlm
