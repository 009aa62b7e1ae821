#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cmlm/model.hpp"
#include "cmlm/rng.hpp"

namespace cmlm::testing {

inline ModelConfig gradcheck_config() {
  ModelConfig mc = ModelConfig::tiny(40);
  mc.embed_dim = 16;
  mc.ffn_embed_dim = 32;
  mc.attention_heads = 2;
  mc.max_positions = 32;
  return mc;
}

inline std::vector<WeightedSequence> random_batch(Rng& rng, int vocab, int sequences, int length) {
  std::vector<WeightedSequence> batch(static_cast<std::size_t>(sequences));
  for (auto& s : batch) {
    for (int i = 0; i < length; ++i) {
      s.tokens.push_back(static_cast<TokenId>(rng.uniform_int(0, static_cast<std::uint64_t>(vocab - 1))));
      s.weights.push_back(rng.uniform_int(0, 3) != 0);
    }
  }
  return batch;
}

struct GradCheck {
  double max_relative_error = 0;
  int coordinates = 0;
};

// Central differences on `coordinates` parameters drawn uniformly.
inline GradCheck gradient_check(Transformer<double>& model, const std::vector<WeightedSequence>& batch,
                                int coordinates, std::uint64_t seed, double h = 1e-5) {
  std::vector<double> grad(model.parameters().size());
  model.loss_and_gradient(batch, grad);
  Rng rng(seed);
  GradCheck out;
  for (int k = 0; k < coordinates; ++k) {
    const std::size_t i = rng.uniform_int(0, grad.size() - 1);
    auto p = model.parameters();
    const double orig = p[i];
    p[i] = orig + h;
    const double up = model.loss(batch);
    p[i] = orig - h;
    const double down = model.loss(batch);
    p[i] = orig;
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(fd - grad[i]) / denom);
    ++out.coordinates;
  }
  return out;
}

// Changing tokens[j] at a zero-weight final position must leave every
// gradient untouched when no later position is scored.
inline bool zero_weight_contributes_nothing(const Transformer<double>& model, Rng& rng) {
  const int vocab = model.config().vocab_size;
  WeightedSequence base;
  for (int i = 0; i < 10; ++i) {
    base.tokens.push_back(static_cast<TokenId>(rng.uniform_int(0, static_cast<std::uint64_t>(vocab - 1))));
    base.weights.push_back(1);
  }
  base.weights.back() = 0;
  WeightedSequence other = base;
  other.tokens.back() = static_cast<TokenId>((base.tokens.back() + 1) % vocab);
  std::vector<double> g1(model.parameters().size()), g2(g1.size());
  model.loss_and_gradient(std::vector{base}, g1);
  model.loss_and_gradient(std::vector{other}, g2);
  if (g1 != g2) return false;

  // Zero-weight positions in the middle: the result equals the loss over the
  // scored positions only, computed from logits directly.
  WeightedSequence mixed = base;
  mixed.weights = {0, 1, 0, 1, 1, 0, 0, 1, 0, 1};
  const auto logits = model.forward(mixed.tokens);
  double total = 0;
  int scored = 0;
  for (std::size_t i = 1; i < mixed.tokens.size(); ++i) {
    if (!mixed.weights[i]) continue;
    const auto row = logits.row(static_cast<Eigen::Index>(i - 1));
    const double m = row.maxCoeff();
    const double z = (row.array() - m).exp().sum();
    total -= row(mixed.tokens[i]) - m - std::log(z);
    ++scored;
  }
  return std::abs(model.loss(std::vector{mixed}) - total / scored) < 1e-12;
}

}  // namespace cmlm::testing
