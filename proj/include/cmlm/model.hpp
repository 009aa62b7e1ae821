#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cmlm/vocab.hpp"

namespace cmlm {

// Decoder architecture. Field names follow the usual fairseq decoder flags.
struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int ffn_embed_dim = 256;
  int layers = 2;
  int attention_heads = 4;
  bool normalize_before = true;
  bool share_input_output_embed = true;
  bool learned_positions = false;
  int max_positions = 512;
  double dropout = 0.0;

  static ModelConfig tiny(int vocab_size);
  static ModelConfig small(int vocab_size);
  // Published 2.7B / 13B shapes. Representable, far too large to instantiate here.
  static ModelConfig medium(int vocab_size);
  static ModelConfig large(int vocab_size);
  static ModelConfig preset(const std::string& name, int vocab_size);

  // Throws on inconsistent fields.
  void validate() const;
  std::size_t parameter_count() const;

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Offsets of each tensor inside the flat parameter vector, in declared order.
struct ParameterLayout {
  struct Layer {
    std::size_t ln1_gain, ln1_bias;
    std::size_t qkv_weight, qkv_bias;    // D x 3D, 3D
    std::size_t out_weight, out_bias;    // D x D, D
    std::size_t ln2_gain, ln2_bias;
    std::size_t ffn1_weight, ffn1_bias;  // D x F, F
    std::size_t ffn2_weight, ffn2_bias;  // F x D, D
  };
  std::size_t token_embedding = 0;     // V x D
  std::size_t position_embedding = 0;  // P x D, learned positions only
  std::vector<Layer> layers;
  std::size_t final_gain = 0, final_bias = 0;
  std::size_t output_projection = 0;  // V x D, untied output only
  std::size_t total = 0;

  explicit ParameterLayout(const ModelConfig& config);
};

// One training or scoring sequence. weights[i] scales the loss of predicting
// tokens[i] from tokens[0..i); weights[0] is unused.
struct WeightedSequence {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> weights;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Mean negative log-likelihood of `targets[i]` under row i of `logits`,
// over rows with weight 1. Writes d(loss)/d(logits) when `dlogits` is set.
// Throws when every weight is zero.
template <typename T>
double weighted_loss(const RowMatrix<T>& logits, std::span<const TokenId> targets,
                     std::span<const std::uint8_t> weights, RowMatrix<T>* dlogits = nullptr);

// Row-wise log-softmax in double precision.
std::vector<double> log_softmax(std::span<const double> logits);

// Pre-norm causal transformer with sinusoidal positions and a tied output
// embedding. Parameters live in one flat vector laid out by ParameterLayout.
template <typename T>
class Transformer {
 public:
  using Matrix = RowMatrix<T>;

  Transformer(ModelConfig config, std::uint64_t seed);
  Transformer(ModelConfig config, std::vector<T> parameters);

  const ModelConfig& config() const noexcept { return config_; }
  const ParameterLayout& layout() const noexcept { return layout_; }
  std::span<T> parameters() noexcept { return params_; }
  std::span<const T> parameters() const noexcept { return params_; }

  // Logits of shape (length, vocab). Row i depends only on tokens[0..i].
  Matrix forward(std::span<const TokenId> tokens) const;

  // Mean weighted NLL over all scored positions of the batch.
  double loss(std::span<const WeightedSequence> batch) const;
  // Same value; `gradient` (size == parameter count) is overwritten.
  double loss_and_gradient(std::span<const WeightedSequence> batch, std::span<T> gradient) const;

 private:
  struct Cache;

  void check_tokens(std::span<const TokenId> tokens) const;
  Matrix run_forward(std::span<const TokenId> tokens, Cache* cache) const;
  void backward(std::span<const TokenId> tokens, const Cache& cache, const Matrix& dlogits,
                std::span<T> gradient) const;

  ModelConfig config_;
  ParameterLayout layout_;
  std::vector<T> params_;
  Matrix positions_;  // sinusoidal table, max_positions x D
};

extern template class Transformer<float>;
extern template class Transformer<double>;

// Versioned binary container: magic, version, JSON header (config echo and
// metadata), parameters as little-endian float64 in declared order, then an
// FNV-1a checksum of everything before it.
struct Checkpoint {
  ModelConfig config;
  int image_vocab_size = Vocab::kDefaultImageVocabSize;
  std::string precision = "float";
  std::vector<double> parameters;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cmlm
