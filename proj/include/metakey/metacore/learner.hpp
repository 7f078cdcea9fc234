#pragma once

#include <vector>

#include "metakey/common/torch.hpp"
#include "metakey/kpnet/model.hpp"
#include "metakey/taskdata/sampler.hpp"

namespace metakey::metacore {

struct Batch {
  at::Tensor inputs;
  at::Tensor targets;
  std::int64_t size() const { return inputs.defined() ? inputs.size(0) : 0; }
};

struct TaskBatch {
  Batch support;
  Batch query;
};

/// A model the meta-learner can adapt: a loss that is a pure function of
/// the weights it is given (plus batchnorm bookkeeping).
class Learner {
 public:
  virtual ~Learner() = default;

  /// Differentiable optimisation objective, averaged over the batch.
  virtual at::Tensor loss(const kpnet::ModelWeights& weights, const Batch& batch,
                          kpnet::BnContext bn) const = 0;

  /// Loss reported to users; defaults to the objective.
  virtual at::Tensor report_loss(const kpnet::ModelWeights& weights, const Batch& batch,
                                 kpnet::BnContext bn) const {
    return loss(weights, batch, bn);
  }

  /// Per-sample reported loss, [B].
  virtual at::Tensor report_loss_per_sample(const kpnet::ModelWeights& weights, const Batch& batch,
                                            kpnet::BnContext bn) const;
};

/// Keypoint network: optimises the normalised keypoint loss and reports the
/// pixel keypoint loss.
class KeypointLearner final : public Learner {
 public:
  explicit KeypointLearner(kpnet::ModelConfig config);

  const kpnet::ModelConfig& config() const { return config_; }

  at::Tensor loss(const kpnet::ModelWeights& weights, const Batch& batch,
                  kpnet::BnContext bn) const override;
  at::Tensor report_loss(const kpnet::ModelWeights& weights, const Batch& batch,
                         kpnet::BnContext bn) const override;
  at::Tensor report_loss_per_sample(const kpnet::ModelWeights& weights, const Batch& batch,
                                    kpnet::BnContext bn) const override;

 private:
  kpnet::ModelConfig config_;
};

Batch make_batch(const std::vector<taskdata::Sample>& samples, at::ScalarType dtype = at::kFloat);
std::vector<TaskBatch> make_task_batches(const taskdata::EpisodeBatch& episode,
                                         at::ScalarType dtype = at::kFloat);

}  // namespace metakey::metacore
