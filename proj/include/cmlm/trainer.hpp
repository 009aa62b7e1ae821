#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmlm/cm_objective.hpp"
#include "cmlm/model.hpp"

namespace cmlm {

struct TrainConfig {
  double peak_lr = 3e-4;
  int warmup_updates = 100;  // 1500 in the published recipe
  int total_updates = 1000;
  double end_lr = 0.0;
  double power = 1.0;
  int batch_size = 8;
  int max_seq_len = 256;  // 2048 in the published recipe
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Linear warmup from 0 to peak_lr, then polynomial decay to end_lr at
// total_updates.
double lr_at(int step, const TrainConfig& config);

// Scales `grads` in place so their global L2 norm is at most clip_norm.
// Returns the norm before clipping.
template <typename T>
double clip_gradients(std::span<T> grads, double clip_norm);

// Greedy packing of whole sequences (each ending in <eod>) into chunks of at
// most max_seq_len tokens. A sequence longer than max_seq_len is split into
// consecutive pieces.
std::vector<WeightedSequence> pack_sequences(std::span<const TransformedSequence> sequences,
                                             int max_seq_len);

struct TraceRow {
  int step = 0;
  double lr = 0;
  double loss = 0;
};

// Thrown when the loss stops being finite.
class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(int step);
  int step() const noexcept { return step_; }

 private:
  int step_;
};

template <typename T>
class Trainer {
 public:
  Trainer(Transformer<T>& model, TrainConfig config);

  // One Adam update on `batch`; returns the pre-update batch loss.
  double step(std::span<const WeightedSequence> batch);

  // Runs total_updates steps over `chunks`, visiting them in a seed-determined
  // order (reshuffled every epoch).
  std::vector<TraceRow> run(std::span<const WeightedSequence> chunks);

  int steps_done() const noexcept { return steps_done_; }

 private:
  Transformer<T>& model_;
  TrainConfig config_;
  std::vector<T> grad_;
  std::vector<double> m_;
  std::vector<double> v_;
  int steps_done_ = 0;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

// Mean loss over `chunks`, evaluated in batches.
template <typename T>
double evaluate_loss(const Transformer<T>& model, std::span<const WeightedSequence> chunks);

void write_loss_trace(const std::filesystem::path& path, std::span<const TraceRow> trace);

}  // namespace cmlm
