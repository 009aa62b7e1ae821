#pragma once

// Small LanguageModel implementations with hand-set, context-dependent
// logits, used as oracles for the decoding routines.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cmlm/decoding.hpp"
#include "cmlm/rng.hpp"

namespace cmlm::testing {

// Same distribution at every step.
class UnigramModel final : public LanguageModel {
 public:
  explicit UnigramModel(std::vector<double> logits, std::size_t max_positions = 4096)
      : logits_(std::move(logits)), max_positions_(max_positions) {}
  int vocab_size() const override { return static_cast<int>(logits_.size()); }
  std::size_t max_positions() const override { return max_positions_; }
  std::vector<double> next_token_logits(std::span<const TokenId>) const override { return logits_; }

 private:
  std::vector<double> logits_;
  std::size_t max_positions_;
};

// Logits are a pseudo-random function of (context length, last two tokens),
// so every prefix gets its own distribution. Values are exact multiples of
// 1/64 in [-3, 3) to keep comparisons free of hashing noise.
class HashedModel final : public LanguageModel {
 public:
  HashedModel(int vocab, std::uint64_t seed, std::size_t max_positions = 4096)
      : vocab_(vocab), seed_(seed), max_positions_(max_positions) {}
  int vocab_size() const override { return vocab_; }
  std::size_t max_positions() const override { return max_positions_; }
  std::vector<double> next_token_logits(std::span<const TokenId> context) const override {
    std::uint64_t h = splitmix64(seed_ ^ context.size());
    for (std::size_t i = context.size() >= 2 ? context.size() - 2 : 0; i < context.size(); ++i) {
      h = splitmix64(h ^ static_cast<std::uint64_t>(context[i] + 1));
    }
    std::vector<double> out(static_cast<std::size_t>(vocab_));
    for (int t = 0; t < vocab_; ++t) {
      h = splitmix64(h + static_cast<std::uint64_t>(t));
      out[t] = static_cast<double>(static_cast<int>(h % 384) - 192) / 64.0;
    }
    return out;
  }

 private:
  int vocab_;
  std::uint64_t seed_;
  std::size_t max_positions_;
};

// Exact log-probability of `continuation` after `prompt`, summed one prefix
// at a time with a direct log-sum-exp.
inline double sequence_logprob(const LanguageModel& model, std::span<const TokenId> prompt,
                               std::span<const TokenId> continuation) {
  std::vector<TokenId> context(prompt.begin(), prompt.end());
  double total = 0;
  for (TokenId t : continuation) {
    const auto logits = model.next_token_logits(context);
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double z = 0;
    for (double v : logits) z += std::exp(v - m);
    total += logits[t] - m - std::log(z);
    context.push_back(t);
  }
  return total;
}

}  // namespace cmlm::testing
