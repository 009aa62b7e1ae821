#include "cmlm/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>

#include "cmlm/error.hpp"
#include "cmlm/rng.hpp"

namespace cmlm {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr char kMagic[8] = {'C', 'M', 'L', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using VectorMap = Eigen::Map<RowVector<T>>;
template <typename T>
using ConstVectorMap = Eigen::Map<const RowVector<T>>;

double standard_normal(Rng& rng) {
  const double u1 = 1.0 - rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
void layer_norm_forward(const RowMatrix<T>& x, const T* gain, const T* bias,
                        RowMatrix<T>& xhat, std::vector<T>& rstd, RowMatrix<T>& y) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index dim = x.cols();
  ConstVectorMap<T> g(gain, dim);
  ConstVectorMap<T> b(bias, dim);
  xhat.resize(rows, dim);
  y.resize(rows, dim);
  rstd.resize(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const T mean = x.row(i).mean();
    const RowVector<T> centered = x.row(i).array() - mean;
    const T var = centered.squaredNorm() / T(dim);
    rstd[i] = T(1) / std::sqrt(var + T(kLayerNormEps));
    xhat.row(i) = centered * rstd[i];
    y.row(i) = xhat.row(i).cwiseProduct(g) + b;
  }
}

// out += sum of the rows of m, added one row at a time. Eigen's colwise
// reduction may reassociate the sum, which lets rows that are exactly zero
// still perturb the last bits of the result.
template <typename T, typename Derived>
void add_row_sum(const Eigen::MatrixBase<Derived>& m, T* out) {
  VectorMap<T> acc(out, m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) acc += m.row(r);
}

// Returns dx; accumulates gain/bias gradients.
template <typename T>
RowMatrix<T> layer_norm_backward(const RowMatrix<T>& dy, const RowMatrix<T>& xhat,
                                 const std::vector<T>& rstd, const T* gain, T* dgain, T* dbias) {
  const Eigen::Index rows = dy.rows();
  const Eigen::Index dim = dy.cols();
  ConstVectorMap<T> g(gain, dim);
  add_row_sum<T>(dy.cwiseProduct(xhat), dgain);
  add_row_sum<T>(dy, dbias);
  RowMatrix<T> dx(rows, dim);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const RowVector<T> dxhat = dy.row(i).cwiseProduct(g);
    const T sum = dxhat.sum();
    const T dot = dxhat.dot(xhat.row(i));
    dx.row(i) = (rstd[i] / T(dim)) *
                (T(dim) * dxhat.array() - sum - xhat.row(i).array() * dot).matrix();
  }
  return dx;
}

// Sum over rows with weight 1 of -log softmax(logits[r])[target[r]]. When
// `dlogits` is set, row r receives scale * (softmax - onehot) for scored rows
// and exact zeros elsewhere.
template <typename T>
double accumulate_nll(const RowMatrix<T>& logits, std::span<const TokenId> targets,
                      std::span<const std::uint8_t> weights, double scale,
                      RowMatrix<T>* dlogits) {
  const Eigen::Index rows = logits.rows();
  const Eigen::Index vocab = logits.cols();
  if (dlogits) dlogits->setZero(rows, vocab);
  double total = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (weights[r] == 0) continue;
    const TokenId target = targets[r];
    if (target < 0 || target >= vocab) throw Error("model", "target id out of range");
    double max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < vocab; ++j) max = std::max(max, static_cast<double>(logits(r, j)));
    double sum = 0;
    for (Eigen::Index j = 0; j < vocab; ++j) sum += std::exp(static_cast<double>(logits(r, j)) - max);
    const double lse = max + std::log(sum);
    total += lse - static_cast<double>(logits(r, target));
    if (dlogits) {
      for (Eigen::Index j = 0; j < vocab; ++j) {
        (*dlogits)(r, j) = static_cast<T>(scale * std::exp(static_cast<double>(logits(r, j)) - lse));
      }
      (*dlogits)(r, target) -= static_cast<T>(scale);
    }
  }
  return total;
}

void write_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void write_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint64_t read_le(const std::string& in, std::size_t& pos, int bytes) {
  if (pos + bytes > in.size()) throw Error("model", "truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += bytes;
  return v;
}

}  // namespace

// ---------------------------------------------------------------- config

ModelConfig ModelConfig::tiny(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = 64;
  c.ffn_embed_dim = 256;
  c.layers = 2;
  c.attention_heads = 4;
  c.max_positions = 512;
  return c;
}

ModelConfig ModelConfig::small(int vocab_size) {
  ModelConfig c = tiny(vocab_size);
  c.embed_dim = 128;
  c.ffn_embed_dim = 512;
  c.layers = 4;
  return c;
}

ModelConfig ModelConfig::medium(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = 2560;
  c.ffn_embed_dim = 10240;
  c.layers = 32;
  c.attention_heads = 32;
  c.max_positions = 2048;
  return c;
}

ModelConfig ModelConfig::large(int vocab_size) {
  ModelConfig c = medium(vocab_size);
  c.embed_dim = 5120;
  c.ffn_embed_dim = 20480;
  c.layers = 40;
  c.attention_heads = 40;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name, int vocab_size) {
  if (name == "tiny") return tiny(vocab_size);
  if (name == "small") return small(vocab_size);
  if (name == "medium") return medium(vocab_size);
  if (name == "large") return large(vocab_size);
  throw Error("model", "unknown model preset '" + name + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error("model", "invalid config: " + msg); };
  if (vocab_size < 1) fail("vocab_size must be positive");
  if (embed_dim < 2 || embed_dim % 2 != 0) fail("embed_dim must be even and positive");
  if (attention_heads < 1 || embed_dim % attention_heads != 0) {
    fail("embed_dim must be divisible by attention_heads");
  }
  if (ffn_embed_dim < 1) fail("ffn_embed_dim must be positive");
  if (layers < 1) fail("layers must be positive");
  if (max_positions < 1) fail("max_positions must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

std::size_t ModelConfig::parameter_count() const { return ParameterLayout(*this).total; }

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["embed_dim"] = embed_dim;
  j["ffn_embed_dim"] = ffn_embed_dim;
  j["layers"] = layers;
  j["attention_heads"] = attention_heads;
  j["normalize_before"] = normalize_before;
  j["share_input_output_embed"] = share_input_output_embed;
  j["learned_positions"] = learned_positions;
  j["max_positions"] = max_positions;
  j["dropout"] = dropout;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.at("vocab_size").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.ffn_embed_dim = j.at("ffn_embed_dim").get<int>();
    c.layers = j.at("layers").get<int>();
    c.attention_heads = j.at("attention_heads").get<int>();
    c.normalize_before = j.at("normalize_before").get<bool>();
    c.share_input_output_embed = j.at("share_input_output_embed").get<bool>();
    c.learned_positions = j.at("learned_positions").get<bool>();
    c.max_positions = j.at("max_positions").get<int>();
    c.dropout = j.value("dropout", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error("model", std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

ParameterLayout::ParameterLayout(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim;
  const std::size_t f = c.ffn_embed_dim;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t offset = at;
    at += n;
    return offset;
  };
  token_embedding = take(static_cast<std::size_t>(c.vocab_size) * d);
  if (c.learned_positions) position_embedding = take(static_cast<std::size_t>(c.max_positions) * d);
  layers.resize(c.layers);
  for (auto& l : layers) {
    l.ln1_gain = take(d);
    l.ln1_bias = take(d);
    l.qkv_weight = take(d * 3 * d);
    l.qkv_bias = take(3 * d);
    l.out_weight = take(d * d);
    l.out_bias = take(d);
    l.ln2_gain = take(d);
    l.ln2_bias = take(d);
    l.ffn1_weight = take(d * f);
    l.ffn1_bias = take(f);
    l.ffn2_weight = take(f * d);
    l.ffn2_bias = take(d);
  }
  final_gain = take(d);
  final_bias = take(d);
  if (!c.share_input_output_embed) output_projection = take(static_cast<std::size_t>(c.vocab_size) * d);
  total = at;
}

// ---------------------------------------------------------------- loss

template <typename T>
double weighted_loss(const RowMatrix<T>& logits, std::span<const TokenId> targets,
                     std::span<const std::uint8_t> weights, RowMatrix<T>* dlogits) {
  const auto rows = static_cast<std::size_t>(logits.rows());
  if (targets.size() != rows || weights.size() != rows) {
    throw Error("model", "logits, targets and weights must have equal lengths");
  }
  std::size_t scored = 0;
  for (auto w : weights) {
    if (w > 1) throw Error("model", "loss weights must be 0 or 1");
    scored += w;
  }
  if (scored == 0) throw Error("model", "all loss weights are zero; mean is undefined");
  const double scale = 1.0 / static_cast<double>(scored);
  return accumulate_nll(logits, targets, weights, scale, dlogits) * scale;
}

template double weighted_loss<float>(const RowMatrix<float>&, std::span<const TokenId>,
                                     std::span<const std::uint8_t>, RowMatrix<float>*);
template double weighted_loss<double>(const RowMatrix<double>&, std::span<const TokenId>,
                                      std::span<const std::uint8_t>, RowMatrix<double>*);

std::vector<double> log_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double max = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (double x : logits) sum += std::exp(x - max);
  const double lse = max + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

// ---------------------------------------------------------------- transformer

template <typename T>
struct Transformer<T>::Cache {
  struct Layer {
    Matrix xhat1, h1, qkv, attn, xhat2, h2, pre_act, act;
    std::vector<T> rstd1, rstd2;
    std::vector<Matrix> probs;
  };
  std::vector<Layer> layers;
  Matrix xhat_final, h_final;
  std::vector<T> rstd_final;
};

template <typename T>
Transformer<T>::Transformer(ModelConfig config, std::uint64_t seed)
    : Transformer(config, std::vector<T>(ParameterLayout(config).total, T(0))) {
  Rng rng(seed);
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim));
  auto fill_normal = [&](std::size_t offset, std::size_t n, double stddev) {
    for (std::size_t i = 0; i < n; ++i) params_[offset + i] = static_cast<T>(stddev * standard_normal(rng));
  };
  auto fill_const = [&](std::size_t offset, std::size_t n, T value) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(offset), n, value);
  };
  const std::size_t d = config_.embed_dim;
  const std::size_t f = config_.ffn_embed_dim;
  const std::size_t v = config_.vocab_size;
  fill_normal(layout_.token_embedding, v * d, embed_std);
  if (config_.learned_positions) {
    fill_normal(layout_.position_embedding, static_cast<std::size_t>(config_.max_positions) * d, embed_std);
  }
  for (const auto& l : layout_.layers) {
    fill_const(l.ln1_gain, d, T(1));
    fill_normal(l.qkv_weight, d * 3 * d, kInitStd);
    fill_normal(l.out_weight, d * d, kInitStd);
    fill_const(l.ln2_gain, d, T(1));
    fill_normal(l.ffn1_weight, d * f, kInitStd);
    fill_normal(l.ffn2_weight, f * d, kInitStd);
  }
  fill_const(layout_.final_gain, d, T(1));
  if (!config_.share_input_output_embed) fill_normal(layout_.output_projection, v * d, embed_std);
}

template <typename T>
Transformer<T>::Transformer(ModelConfig config, std::vector<T> parameters)
    : config_(std::move(config)), layout_(config_), params_(std::move(parameters)) {
  if (!config_.normalize_before) throw Error("model", "post-norm blocks are not supported");
  if (config_.dropout != 0.0) throw Error("model", "dropout is not supported in this trainer");
  if (params_.size() != layout_.total) {
    throw Error("model", "parameter count " + std::to_string(params_.size()) + " does not match config (" +
                             std::to_string(layout_.total) + ")");
  }
  const int d = config_.embed_dim;
  const int half = d / 2;
  positions_.resize(config_.max_positions, d);
  const double step = half > 1 ? std::log(10000.0) / (half - 1) : 0.0;
  for (int p = 0; p < config_.max_positions; ++p) {
    for (int j = 0; j < half; ++j) {
      const double angle = p * std::exp(-step * j);
      positions_(p, j) = static_cast<T>(std::sin(angle));
      positions_(p, half + j) = static_cast<T>(std::cos(angle));
    }
  }
}

template <typename T>
void Transformer<T>::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw Error("model", "empty input sequence");
  if (tokens.size() > static_cast<std::size_t>(config_.max_positions)) {
    throw Error("model", "sequence length " + std::to_string(tokens.size()) + " exceeds max_positions " +
                             std::to_string(config_.max_positions));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= config_.vocab_size) throw Error("model", "token id " + std::to_string(t) + " out of range");
  }
}

template <typename T>
typename Transformer<T>::Matrix Transformer<T>::forward(std::span<const TokenId> tokens) const {
  check_tokens(tokens);
  return run_forward(tokens, nullptr);
}

template <typename T>
typename Transformer<T>::Matrix Transformer<T>::run_forward(std::span<const TokenId> tokens,
                                                            Cache* cache) const {
  const Eigen::Index len = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index d = config_.embed_dim;
  const Eigen::Index f = config_.ffn_embed_dim;
  const Eigen::Index heads = config_.attention_heads;
  const Eigen::Index dh = d / heads;
  const T* p = params_.data();
  const T embed_scale = static_cast<T>(std::sqrt(static_cast<double>(d)));
  const T attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  ConstMatrixMap<T> embedding(p + layout_.token_embedding, config_.vocab_size, d);
  Matrix x(len, d);
  for (Eigen::Index i = 0; i < len; ++i) {
    x.row(i) = embedding.row(tokens[i]) * embed_scale;
    if (config_.learned_positions) {
      x.row(i) += ConstMatrixMap<T>(p + layout_.position_embedding, config_.max_positions, d).row(i);
    } else {
      x.row(i) += positions_.row(i);
    }
  }
  if (cache) cache->layers.resize(layout_.layers.size());

  for (std::size_t li = 0; li < layout_.layers.size(); ++li) {
    const auto& l = layout_.layers[li];
    typename Cache::Layer local;
    typename Cache::Layer& c = cache ? cache->layers[li] : local;

    layer_norm_forward<T>(x, p + l.ln1_gain, p + l.ln1_bias, c.xhat1, c.rstd1, c.h1);
    c.qkv = c.h1 * ConstMatrixMap<T>(p + l.qkv_weight, d, 3 * d);
    c.qkv.rowwise() += ConstVectorMap<T>(p + l.qkv_bias, 3 * d);

    c.attn.resize(len, d);
    c.probs.assign(heads, Matrix());
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
      Matrix& probs = c.probs[h];
      probs = (q * k.transpose()) * attn_scale;
      for (Eigen::Index i = 0; i < len; ++i) {
        const T max = probs.row(i).head(i + 1).maxCoeff();
        T sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          probs(i, j) = std::exp(probs(i, j) - max);
          sum += probs(i, j);
        }
        probs.row(i).head(i + 1) /= sum;
        probs.row(i).tail(len - i - 1).setZero();
      }
      c.attn.middleCols(h * dh, dh) = probs * v;
    }
    Matrix mid = c.attn * ConstMatrixMap<T>(p + l.out_weight, d, d);
    mid.rowwise() += ConstVectorMap<T>(p + l.out_bias, d);
    mid += x;

    layer_norm_forward<T>(mid, p + l.ln2_gain, p + l.ln2_bias, c.xhat2, c.rstd2, c.h2);
    c.pre_act = c.h2 * ConstMatrixMap<T>(p + l.ffn1_weight, d, f);
    c.pre_act.rowwise() += ConstVectorMap<T>(p + l.ffn1_bias, f);
    c.act = c.pre_act.unaryExpr([](T u) { return gelu(u); });
    x = c.act * ConstMatrixMap<T>(p + l.ffn2_weight, f, d);
    x.rowwise() += ConstVectorMap<T>(p + l.ffn2_bias, d);
    x += mid;
  }

  Matrix xhat_local, h_local;
  std::vector<T> rstd_local;
  Matrix& hf = cache ? cache->h_final : h_local;
  layer_norm_forward<T>(x, p + layout_.final_gain, p + layout_.final_bias,
                        cache ? cache->xhat_final : xhat_local,
                        cache ? cache->rstd_final : rstd_local, hf);
  const std::size_t out_offset =
      config_.share_input_output_embed ? layout_.token_embedding : layout_.output_projection;
  return hf * ConstMatrixMap<T>(p + out_offset, config_.vocab_size, d).transpose();
}

template <typename T>
void Transformer<T>::backward(std::span<const TokenId> tokens, const Cache& cache,
                              const Matrix& dlogits, std::span<T> gradient) const {
  const Eigen::Index len = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index d = config_.embed_dim;
  const Eigen::Index f = config_.ffn_embed_dim;
  const Eigen::Index heads = config_.attention_heads;
  const Eigen::Index dh = d / heads;
  const T* p = params_.data();
  T* g = gradient.data();
  const T embed_scale = static_cast<T>(std::sqrt(static_cast<double>(d)));
  const T attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  const std::size_t out_offset =
      config_.share_input_output_embed ? layout_.token_embedding : layout_.output_projection;
  ConstMatrixMap<T> out_weight(p + out_offset, config_.vocab_size, d);
  MatrixMap<T>(g + out_offset, config_.vocab_size, d).noalias() += dlogits.transpose() * cache.h_final;
  Matrix dx = layer_norm_backward<T>(dlogits * out_weight, cache.xhat_final, cache.rstd_final,
                                     p + layout_.final_gain, g + layout_.final_gain, g + layout_.final_bias);

  for (std::size_t li = layout_.layers.size(); li-- > 0;) {
    const auto& l = layout_.layers[li];
    const auto& c = cache.layers[li];

    // Feed-forward block; dx is the gradient w.r.t. the block output.
    MatrixMap<T>(g + l.ffn2_weight, f, d).noalias() += c.act.transpose() * dx;
    add_row_sum<T>(dx, g + l.ffn2_bias);
    Matrix dpre = dx * ConstMatrixMap<T>(p + l.ffn2_weight, f, d).transpose();
    dpre = dpre.cwiseProduct(c.pre_act.unaryExpr([](T u) { return gelu_grad(u); }));
    MatrixMap<T>(g + l.ffn1_weight, d, f).noalias() += c.h2.transpose() * dpre;
    add_row_sum<T>(dpre, g + l.ffn1_bias);
    const Matrix dh2 = dpre * ConstMatrixMap<T>(p + l.ffn1_weight, d, f).transpose();
    const Matrix dmid = dx + layer_norm_backward<T>(dh2, c.xhat2, c.rstd2, p + l.ln2_gain,
                                                    g + l.ln2_gain, g + l.ln2_bias);

    // Attention block.
    MatrixMap<T>(g + l.out_weight, d, d).noalias() += c.attn.transpose() * dmid;
    add_row_sum<T>(dmid, g + l.out_bias);
    const Matrix dattn = dmid * ConstMatrixMap<T>(p + l.out_weight, d, d).transpose();
    Matrix dqkv(len, 3 * d);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
      const Matrix& probs = c.probs[h];
      const auto dout = dattn.middleCols(h * dh, dh);
      Matrix dscores = dout * v.transpose();
      dqkv.middleCols(2 * d + h * dh, dh) = probs.transpose() * dout;
      for (Eigen::Index i = 0; i < len; ++i) {
        const T dot = dscores.row(i).dot(probs.row(i));
        dscores.row(i) = probs.row(i).cwiseProduct((dscores.row(i).array() - dot).matrix());
      }
      dqkv.middleCols(h * dh, dh) = (dscores * k) * attn_scale;
      dqkv.middleCols(d + h * dh, dh) = (dscores.transpose() * q) * attn_scale;
    }
    MatrixMap<T>(g + l.qkv_weight, d, 3 * d).noalias() += c.h1.transpose() * dqkv;
    add_row_sum<T>(dqkv, g + l.qkv_bias);
    const Matrix dh1 = dqkv * ConstMatrixMap<T>(p + l.qkv_weight, d, 3 * d).transpose();
    dx = dmid + layer_norm_backward<T>(dh1, c.xhat1, c.rstd1, p + l.ln1_gain, g + l.ln1_gain,
                                       g + l.ln1_bias);
  }

  MatrixMap<T> dembed(g + layout_.token_embedding, config_.vocab_size, d);
  for (Eigen::Index i = 0; i < len; ++i) {
    dembed.row(tokens[i]) += dx.row(i) * embed_scale;
    if (config_.learned_positions) {
      MatrixMap<T>(g + layout_.position_embedding, config_.max_positions, d).row(i) += dx.row(i);
    }
  }
}

template <typename T>
double Transformer<T>::loss(std::span<const WeightedSequence> batch) const {
  std::size_t scored = 0;
  for (const auto& seq : batch) {
    if (seq.weights.size() != seq.tokens.size()) throw Error("model", "weights/tokens length mismatch");
    for (std::size_t i = 1; i < seq.weights.size(); ++i) scored += seq.weights[i] != 0;
  }
  if (scored == 0) throw Error("model", "batch has no scored positions");
  double total = 0;
  for (const auto& seq : batch) {
    check_tokens(seq.tokens);
    const Matrix logits = run_forward(seq.tokens, nullptr);
    std::vector<TokenId> targets(seq.tokens.size(), 0);
    std::vector<std::uint8_t> weights(seq.tokens.size(), 0);
    for (std::size_t i = 0; i + 1 < seq.tokens.size(); ++i) {
      targets[i] = seq.tokens[i + 1];
      weights[i] = seq.weights[i + 1] != 0;
    }
    total += accumulate_nll<T>(logits, targets, weights, 0.0, nullptr);
  }
  const double loss = total / static_cast<double>(scored);
  if (!std::isfinite(loss)) throw Error("model", "non-finite loss");
  return loss;
}

template <typename T>
double Transformer<T>::loss_and_gradient(std::span<const WeightedSequence> batch,
                                         std::span<T> gradient) const {
  if (gradient.size() != params_.size()) throw Error("model", "gradient buffer has the wrong size");
  std::size_t scored = 0;
  for (const auto& seq : batch) {
    if (seq.weights.size() != seq.tokens.size()) throw Error("model", "weights/tokens length mismatch");
    for (std::size_t i = 1; i < seq.weights.size(); ++i) scored += seq.weights[i] != 0;
  }
  if (scored == 0) throw Error("model", "batch has no scored positions");
  const double scale = 1.0 / static_cast<double>(scored);
  std::fill(gradient.begin(), gradient.end(), T(0));
  double total = 0;
  for (const auto& seq : batch) {
    check_tokens(seq.tokens);
    Cache cache;
    const Matrix logits = run_forward(seq.tokens, &cache);
    std::vector<TokenId> targets(seq.tokens.size(), 0);
    std::vector<std::uint8_t> weights(seq.tokens.size(), 0);
    for (std::size_t i = 0; i + 1 < seq.tokens.size(); ++i) {
      targets[i] = seq.tokens[i + 1];
      weights[i] = seq.weights[i + 1] != 0;
    }
    Matrix dlogits;
    total += accumulate_nll<T>(logits, targets, weights, scale, &dlogits);
    backward(seq.tokens, cache, dlogits, gradient);
  }
  const double loss = total * scale;
  if (!std::isfinite(loss)) throw Error("model", "non-finite loss");
  return loss;
}

template class Transformer<float>;
template class Transformer<double>;

// ---------------------------------------------------------------- checkpoint

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (ckpt.parameters.size() != ckpt.config.parameter_count()) {
    throw Error("model", "checkpoint parameter count does not match config");
  }
  nlohmann::ordered_json header;
  header["format"] = "cmlm-checkpoint";
  header["model"] = ckpt.config.to_json();
  header["image_vocab_size"] = ckpt.image_vocab_size;
  header["precision"] = ckpt.precision;
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  write_u64(out, ckpt.parameters.size());
  out.reserve(out.size() + ckpt.parameters.size() * 8 + 8);
  for (double v : ckpt.parameters) write_u64(out, std::bit_cast<std::uint64_t>(v));
  write_u64(out, fnv1a64(out));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("model", "cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error("model", "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error("model", "cannot open " + path.string());
  const std::string in((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (in.size() < sizeof(kMagic) + 8 + 8 || in.compare(0, sizeof(kMagic), kMagic, sizeof(kMagic)) != 0) {
    throw Error("model", path.string() + " is not a checkpoint");
  }
  std::size_t checksum_pos = in.size() - 8;
  std::size_t pos = checksum_pos;
  const std::uint64_t stored = read_le(in, pos, 8);
  if (stored != fnv1a64(std::string_view(in).substr(0, checksum_pos))) {
    throw Error("model", "checkpoint checksum mismatch in " + path.string());
  }
  pos = sizeof(kMagic);
  const auto version = static_cast<std::uint32_t>(read_le(in, pos, 4));
  if (version != kCheckpointVersion) {
    throw Error("model", "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = static_cast<std::size_t>(read_le(in, pos, 4));
  if (pos + header_len > checksum_pos) throw Error("model", "truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error("model", std::string("malformed checkpoint header: ") + e.what());
  }
  pos += header_len;
  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(header.at("model"));
  ckpt.image_vocab_size = header.value("image_vocab_size", Vocab::kDefaultImageVocabSize);
  ckpt.precision = header.value("precision", std::string("float"));
  const std::uint64_t count = read_le(in, pos, 8);
  if (count != ckpt.config.parameter_count() || pos + count * 8 != checksum_pos) {
    throw Error("model", "checkpoint parameter block does not match its config");
  }
  ckpt.parameters.resize(count);
  for (auto& v : ckpt.parameters) v = std::bit_cast<double>(read_le(in, pos, 8));
  return ckpt;
}

}  // namespace cmlm
