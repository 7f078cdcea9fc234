#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "metakey/metacore/learner.hpp"
#include "metakey/metacore/meta_state.hpp"
#include "metakey/taskdata/split.hpp"

namespace metakey::baseline {

struct BaselineConfig {
  std::int64_t epochs = 50;
  double lr = 1e-4;
  std::int64_t batch = 16;
  /// Gradient steps of the few-shot finetune arm.
  std::int64_t finetune_steps = 3;
  double bn_momentum = 0.1;

  void validate() const;
  bool operator==(const BaselineConfig&) const = default;
};

/// Conventional training state; `epoch` counts completed epochs.
struct BaselineState {
  kpnet::ModelWeights weights;
  metacore::AdamState optimizer;
  std::int64_t epoch = 0;

  BaselineState clone() const;
  bool identical(const BaselineState& other) const;
};

/// Order in which epoch `epoch` visits the training images: a permutation of
/// [0, image_count) that depends only on (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t image_count, std::uint64_t seed,
                                     std::int64_t epoch);

/// One shuffled pass over every image of `split` with Adam at config.lr.
/// Batch statistics are folded into weights.running. Returns the mean
/// training objective over the batches.
double train_epoch(const metacore::Learner& learner, BaselineState& state,
                   const taskdata::Split& split, const BaselineConfig& config, std::uint64_t seed);

struct EpochCheckpoint {
  std::int64_t epoch = 0;
  BaselineState state;
  double val_loss = 0.0;
};

/// Pixel keypoint loss over every image of `val`, batchnorm frozen, no
/// adaptation.
double plain_val_loss(const metacore::Learner& learner, const kpnet::ModelWeights& weights,
                      const taskdata::Split& val);

/// Trains from `initial` for config.epochs epochs, emitting the initial state
/// and then a checkpoint every `interval` epochs (and after the last one).
std::vector<EpochCheckpoint> train_conventional(const metacore::Learner& learner,
                                                BaselineState initial, const taskdata::Split& train,
                                                const taskdata::Split& val,
                                                const BaselineConfig& config, std::uint64_t seed,
                                                std::int64_t interval = 1);

struct FinetuneResult {
  kpnet::ModelWeights weights;
  /// Updates actually kept.
  std::int64_t steps_taken = 0;
  /// A step produced a non-finite loss; `weights` is the last finite iterate.
  bool diverged = false;
};

/// Plain gradient descent on the support batch, every layer adapted,
/// batchnorm frozen on weights.running.
FinetuneResult finetune_baseline(const metacore::Learner& learner, const kpnet::ModelWeights& weights,
                                 const metacore::Batch& support, double lr, std::int64_t steps);

}  // namespace metakey::baseline
