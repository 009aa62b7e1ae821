#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cmlm/model.hpp"
#include "cmlm/vocab.hpp"

namespace cmlm {

// Anything that yields next-token scores for a context.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual int vocab_size() const = 0;
  virtual std::size_t max_positions() const = 0;
  // Unnormalized scores for the token following `context` (non-empty).
  virtual std::vector<double> next_token_logits(std::span<const TokenId> context) const = 0;
  // Row i holds the scores following tokens[0..i]. The default calls
  // next_token_logits once per prefix.
  virtual std::vector<std::vector<double>> prefix_logits(std::span<const TokenId> tokens) const;
};

template <typename T>
class TransformerLM final : public LanguageModel {
 public:
  explicit TransformerLM(const Transformer<T>& model) : model_(model) {}
  int vocab_size() const override { return model_.config().vocab_size; }
  std::size_t max_positions() const override { return model_.config().max_positions; }
  std::vector<double> next_token_logits(std::span<const TokenId> context) const override;
  std::vector<std::vector<double>> prefix_logits(std::span<const TokenId> tokens) const override;

 private:
  const Transformer<T>& model_;
};

struct DecodeSettings {
  double temperature = 1.0;
  bool greedy = false;
  int beam_size = 1;
  // Total sequence length budget, prompt included.
  std::size_t max_len = 256;
  std::vector<TokenId> stop_tokens;
  std::uint64_t seed = 0;

  // Stops on <eod>.
  static DecodeSettings defaults(const Vocab& vocab);
  void validate(const LanguageModel& model) const;
  bool is_stop(TokenId t) const;
};

// Draws from softmax(logits / temperature) until a stop token or max_len.
// The returned continuation includes the stop token when one was drawn.
std::vector<TokenId> sample(const LanguageModel& model, std::span<const TokenId> prompt,
                            const DecodeSettings& settings);

struct BeamResult {
  std::vector<TokenId> tokens;  // continuation, including a final stop token
  double logprob = 0;           // sum of token log-probabilities
  double score = 0;             // logprob / tokens.size()
};

// Maximizes length-normalized log-probability. Ties go to the
// lexicographically smaller token sequence.
BeamResult beam(const LanguageModel& model, std::span<const TokenId> prompt,
                const DecodeSettings& settings);

// Prefix tree of allowed continuations.
class CandidateTrie {
 public:
  struct Node {
    std::map<TokenId, std::size_t> children;
    bool terminal = false;
  };

  CandidateTrie();
  // False if the candidate was already present.
  bool insert(std::span<const TokenId> candidate);
  bool contains(std::span<const TokenId> candidate) const;
  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  const Node& node(std::size_t index) const { return nodes_.at(index); }
  static constexpr std::size_t root() { return 0; }
  std::vector<std::vector<TokenId>> candidates() const;

 private:
  std::vector<Node> nodes_;
  std::size_t count_ = 0;
};

enum class ConstrainedSearch {
  exact,   // best-first search; returns the most probable candidate
  greedy,  // most probable legal token at every step
};

struct ConstrainedResult {
  std::vector<TokenId> candidate;  // a complete trie member, no stop token
  // Sum of log-probabilities renormalized over the legal tokens at each step,
  // including the closing stop token.
  double logprob = 0;
};

// Only trie-legal tokens (plus the first stop token at complete candidates)
// receive probability mass; the rest are masked before normalization.
ConstrainedResult constrained(const LanguageModel& model, std::span<const TokenId> prompt,
                              const CandidateTrie& trie, const DecodeSettings& settings,
                              ConstrainedSearch search = ConstrainedSearch::exact);

struct SizeHintResult {
  std::vector<TokenId> tokens;    // full sequence, prompt included
  std::size_t sentinel_position;  // index of the forced <mask:0>
  std::vector<TokenId> infill;    // tokens after the forced sentinel, stop excluded
};

// Generates until the sequence holds max_len - size_hint tokens, forces
// <mask:0> there, then continues until a stop token or max_len. Sentinels and
// stop tokens are suppressed before the forced position.
SizeHintResult size_hint_decode(const LanguageModel& model, const Vocab& vocab,
                                std::span<const TokenId> prompt, std::size_t size_hint,
                                const DecodeSettings& settings);

struct ScoreResult {
  double total = 0;
  std::vector<double> per_token;  // entry i scores tokens[i + 1]; zero where unweighted
};

ScoreResult score(const LanguageModel& model, std::span<const TokenId> tokens,
                  std::optional<std::span<const std::uint8_t>> weights = std::nullopt);

struct RankedCandidate {
  std::size_t index = 0;  // position in the input list
  double logprob = 0;
  std::size_t rank = 0;   // 1-based
};

// Scores context + candidate + stop for each candidate, counting only the
// candidate and stop positions. Sorted best first; ties keep input order.
std::vector<RankedCandidate> rank_candidates(const LanguageModel& model,
                                             std::span<const TokenId> context,
                                             std::span<const std::vector<TokenId>> candidates,
                                             TokenId stop);

class Reranker {
 public:
  virtual ~Reranker() = default;
  virtual double score(std::span<const TokenId> prompt, std::span<const TokenId> continuation) const = 0;
};

// Default reranker: model log-probability of the continuation.
class LogProbReranker final : public Reranker {
 public:
  explicit LogProbReranker(const LanguageModel& model) : model_(model) {}
  double score(std::span<const TokenId> prompt, std::span<const TokenId> continuation) const override;

 private:
  const LanguageModel& model_;
};

struct RankedSample {
  std::size_t prompt_index = 0;
  std::vector<TokenId> continuation;
  double score = 0;
};

// Draws `samples_per_prompt` continuations per prompt (sample i of all
// prompts uses seed settings.seed + i) and orders them by reranker score.
std::vector<RankedSample> sample_and_rerank(const LanguageModel& model,
                                            std::span<const std::vector<TokenId>> prompts,
                                            std::size_t samples_per_prompt,
                                            const DecodeSettings& settings, const Reranker& reranker);

struct PromptSelection {
  std::size_t prompt_index = 0;
  BeamResult result;
};

// Beam search over every prompt; keeps the output with the lowest perplexity.
PromptSelection select_by_perplexity(const LanguageModel& model,
                                     std::span<const std::vector<TokenId>> prompts,
                                     const DecodeSettings& settings);

}  // namespace cmlm
