#include "cmlm/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cmlm/error.hpp"
#include "cmlm/rng.hpp"

namespace cmlm {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error("trainer", "invalid config: " + msg); };
  if (total_updates < 1) fail("total_updates must be positive");
  if (warmup_updates < 0 || warmup_updates > total_updates) fail("warmup_updates must lie in [0, total_updates]");
  if (!(peak_lr > 0)) fail("peak_lr must be positive");
  if (end_lr < 0 || end_lr > peak_lr) fail("end_lr must lie in [0, peak_lr]");
  if (!(power > 0)) fail("power must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (max_seq_len < 2) fail("max_seq_len must be at least 2");
  if (!(clip_norm > 0)) fail("clip_norm must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
  if (!(epsilon > 0)) fail("epsilon must be positive");
}

double lr_at(int step, const TrainConfig& c) {
  if (step < 0 || step > c.total_updates) {
    throw Error("trainer", "step " + std::to_string(step) + " outside [0, " +
                               std::to_string(c.total_updates) + "]");
  }
  if (step < c.warmup_updates) {
    return c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup_updates);
  }
  if (c.total_updates == c.warmup_updates) return c.peak_lr;
  const double remaining = 1.0 - static_cast<double>(step - c.warmup_updates) /
                                     static_cast<double>(c.total_updates - c.warmup_updates);
  return (c.peak_lr - c.end_lr) * std::pow(remaining, c.power) + c.end_lr;
}

template <typename T>
double clip_gradients(std::span<T> grads, double clip_norm) {
  if (!(clip_norm > 0)) throw Error("trainer", "clip_norm must be positive");
  double sq = 0;
  for (T g : grads) {
    if (!std::isfinite(static_cast<double>(g))) throw Error("trainer", "non-finite gradient");
    sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const double factor = clip_norm / norm;
    for (T& g : grads) g = static_cast<T>(static_cast<double>(g) * factor);
  }
  return norm;
}

template double clip_gradients<float>(std::span<float>, double);
template double clip_gradients<double>(std::span<double>, double);

std::vector<WeightedSequence> pack_sequences(std::span<const TransformedSequence> sequences,
                                             int max_seq_len) {
  if (max_seq_len < 2) throw Error("trainer", "max_seq_len must be at least 2");
  const auto cap = static_cast<std::size_t>(max_seq_len);
  std::vector<WeightedSequence> chunks;
  WeightedSequence current;
  auto flush = [&] {
    if (current.tokens.size() >= 2) chunks.push_back(std::move(current));
    current = WeightedSequence{};
  };
  for (const auto& seq : sequences) {
    if (seq.tokens.size() > cap) {
      flush();
      for (std::size_t at = 0; at < seq.tokens.size(); at += cap) {
        const std::size_t n = std::min(cap, seq.tokens.size() - at);
        current.tokens.assign(seq.tokens.begin() + at, seq.tokens.begin() + at + n);
        current.weights.assign(seq.loss_weights.begin() + at, seq.loss_weights.begin() + at + n);
        flush();
      }
      continue;
    }
    if (current.tokens.size() + seq.tokens.size() > cap) flush();
    current.tokens.insert(current.tokens.end(), seq.tokens.begin(), seq.tokens.end());
    current.weights.insert(current.weights.end(), seq.loss_weights.begin(), seq.loss_weights.end());
  }
  flush();
  return chunks;
}

TrainingDiverged::TrainingDiverged(int step)
    : Error("trainer", "training diverged (non-finite loss) at step " + std::to_string(step)),
      step_(step) {}

template <typename T>
Trainer<T>::Trainer(Transformer<T>& model, TrainConfig config)
    : model_(model),
      config_(config),
      grad_(model.parameters().size()),
      m_(model.parameters().size(), 0.0),
      v_(model.parameters().size(), 0.0) {
  config_.validate();
}

template <typename T>
double Trainer<T>::step(std::span<const WeightedSequence> batch) {
  const int t = steps_done_ + 1;
  if (t > config_.total_updates) throw Error("trainer", "all updates already taken");
  double loss = 0;
  try {
    loss = model_.loss_and_gradient(batch, grad_);
  } catch (const Error&) {
    throw TrainingDiverged(t);
  }
  if (!std::isfinite(loss)) throw TrainingDiverged(t);
  clip_gradients<T>(grad_, config_.clip_norm);

  const double lr = lr_at(t, config_);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  std::span<T> params = model_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grad_[i]);
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
    const double update = (m_[i] / bias1) / (std::sqrt(v_[i] / bias2) + config_.epsilon);
    double value = static_cast<double>(params[i]);
    if (config_.weight_decay > 0) value -= lr * config_.weight_decay * value;
    params[i] = static_cast<T>(value - lr * update);
  }
  steps_done_ = t;
  return loss;
}

template <typename T>
std::vector<TraceRow> Trainer<T>::run(std::span<const WeightedSequence> chunks) {
  if (chunks.empty()) throw Error("trainer", "no training data");
  Rng rng(config_.seed);
  std::vector<std::size_t> order(chunks.size());
  std::size_t cursor = order.size();
  std::vector<TraceRow> trace;
  std::vector<WeightedSequence> batch;
  while (steps_done_ < config_.total_updates) {
    batch.clear();
    while (batch.size() < static_cast<std::size_t>(config_.batch_size)) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(chunks[order[cursor++]]);
    }
    const double loss = step(batch);
    trace.push_back({steps_done_, lr_at(steps_done_, config_), loss});
  }
  return trace;
}

template class Trainer<float>;
template class Trainer<double>;

template <typename T>
double evaluate_loss(const Transformer<T>& model, std::span<const WeightedSequence> chunks) {
  if (chunks.empty()) throw Error("trainer", "no evaluation data");
  // Token-weighted mean: total NLL over all scored positions.
  double total = 0;
  std::size_t scored = 0;
  for (const auto& chunk : chunks) {
    std::size_t n = 0;
    for (std::size_t i = 1; i < chunk.weights.size(); ++i) n += chunk.weights[i] != 0;
    if (n == 0) continue;
    total += model.loss(std::span<const WeightedSequence>(&chunk, 1)) * static_cast<double>(n);
    scored += n;
  }
  if (scored == 0) throw Error("trainer", "evaluation data has no scored positions");
  return total / static_cast<double>(scored);
}

template double evaluate_loss<float>(const Transformer<float>&, std::span<const WeightedSequence>);
template double evaluate_loss<double>(const Transformer<double>&, std::span<const WeightedSequence>);

void write_loss_trace(const std::filesystem::path& path, std::span<const TraceRow> trace) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("trainer", "cannot write " + path.string());
  out << "step,lr,loss\n";
  char buf[96];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", row.step, row.lr, row.loss);
    out << buf;
  }
}

}  // namespace cmlm
