#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "suslab/toylm.hpp"

namespace suslab::toylm {

using Sequence = std::vector<TokenId>;

/// Adam with linear warmup and cosine decay. Every random choice (shuffling,
/// held-out split, position offsets) derives from `seed`.
struct TrainSchedule {
  int epochs = 40;
  int batch_size = 16;
  double learning_rate = 3e-3;
  double min_lr_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global-norm clip, <= 0 disables
  int warmup_steps = 100;
  /// Sequences are placed at a uniformly drawn start position in
  /// [0, max_start_offset] so the model sees queries and contexts at the
  /// positions the estimators use.
  int max_start_offset = 16;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 1;

  bool operator==(const TrainSchedule&) const = default;
};

struct CorpusSplit {
  std::vector<Sequence> train;
  std::vector<Sequence> heldout;
};

/// Deterministic shuffle-and-cut; keeps at least one training sequence.
CorpusSplit split_corpus(std::span<const Sequence> corpus, double holdout_fraction, std::uint64_t seed);

/// Mean per-token next-token cross-entropy (nats) with sequences at position 0.
double mean_cross_entropy(const ModelParams& params, std::span<const Sequence> sequences);

struct TrainReport {
  double initial_heldout_loss = 0.0;
  double final_heldout_loss = 0.0;
  std::vector<double> epoch_train_loss;
  std::size_t steps = 0;
  std::size_t train_sequences = 0;
  std::size_t heldout_sequences = 0;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

using EpochCallback = std::function<void(int epoch, double train_loss)>;

/// Throws Precondition on an empty corpus or out-of-vocabulary tokens and
/// Numeric (naming the step) when the loss stops being finite.
TrainResult train(ModelParams init, std::span<const Sequence> corpus, const TrainSchedule& schedule,
                  const EpochCallback& on_epoch = {});

}  // namespace suslab::toylm
