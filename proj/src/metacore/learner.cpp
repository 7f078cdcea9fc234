#include "metakey/metacore/learner.hpp"

#include "metakey/kpnet/loss.hpp"

namespace metakey::metacore {

at::Tensor Learner::report_loss_per_sample(const kpnet::ModelWeights& weights, const Batch& batch,
                                           kpnet::BnContext bn) const {
  // Generic fallback: one forward per sample.
  std::vector<at::Tensor> parts;
  for (std::int64_t i = 0; i < batch.size(); ++i) {
    Batch one{batch.inputs.narrow(0, i, 1), batch.targets.narrow(0, i, 1)};
    parts.push_back(report_loss(weights, one, bn).reshape({1}));
  }
  return at::cat(parts);
}

KeypointLearner::KeypointLearner(kpnet::ModelConfig config) : config_(std::move(config)) {
  config_.validate();
}

at::Tensor KeypointLearner::loss(const kpnet::ModelWeights& weights, const Batch& batch,
                                 kpnet::BnContext bn) const {
  const auto pred = kpnet::forward(config_, weights, batch.inputs, bn);
  return kpnet::normalized_keypoint_loss(pred.keypoints, batch.targets, config_.height,
                                         config_.width);
}

at::Tensor KeypointLearner::report_loss(const kpnet::ModelWeights& weights, const Batch& batch,
                                        kpnet::BnContext bn) const {
  const auto pred = kpnet::forward(config_, weights, batch.inputs, bn);
  return kpnet::keypoint_loss(pred.keypoints, batch.targets);
}

at::Tensor KeypointLearner::report_loss_per_sample(const kpnet::ModelWeights& weights,
                                                   const Batch& batch, kpnet::BnContext bn) const {
  const auto pred = kpnet::forward(config_, weights, batch.inputs, bn);
  return kpnet::keypoint_loss_per_sample(pred.keypoints, batch.targets);
}

Batch make_batch(const std::vector<taskdata::Sample>& samples, at::ScalarType dtype) {
  return {kpnet::images_to_tensor(samples, dtype), kpnet::labels_to_tensor(samples, dtype)};
}

std::vector<TaskBatch> make_task_batches(const taskdata::EpisodeBatch& episode,
                                         at::ScalarType dtype) {
  std::vector<TaskBatch> out;
  out.reserve(episode.entries.size());
  for (const auto& e : episode.entries) {
    out.push_back({make_batch(e.support, dtype), make_batch(e.query, dtype)});
  }
  return out;
}

}  // namespace metakey::metacore
