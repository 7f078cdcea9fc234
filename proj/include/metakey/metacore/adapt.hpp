#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "metakey/metacore/learner.hpp"
#include "metakey/metacore/meta_state.hpp"

namespace metakey::metacore {

/// Weights after each inner step; weights[0] is the starting point.
struct AdaptTrajectory {
  std::vector<kpnet::ModelWeights> weights;
  std::vector<double> support_losses;

  std::size_t size() const { return weights.size(); }
  const kpnet::ModelWeights& final_weights() const { return weights.back(); }
};

enum class BnPhase {
  accumulate,  // meta-training: fold batch statistics into set i, normalise with it
  frozen,      // meta-test: normalise with set i, read-only
};

struct InnerOptions {
  /// Keep every step differentiable with respect to the starting weights
  /// and the rate table.
  bool track_gradients = false;
  /// With tracking: differentiate through the inner gradients (exact second
  /// order). Otherwise the inner gradients are treated as constants.
  bool second_order = true;
  BnPhase bn_phase = BnPhase::frozen;
  /// Reported in error messages.
  std::int64_t episode = -1;
};

/// theta' = theta - rate * grad for every array of `layer`.
kpnet::Layer descend(const kpnet::Layer& layer, const std::vector<at::Tensor>& grads,
                     const at::Tensor& rate);

/// N inner gradient steps on the support batch. Step i updates the layers in
/// `mask` with rate[layer][i] and runs its forward passes against the
/// statistics set config.bn_set_for_step(i).
AdaptTrajectory inner_adapt(const Learner& learner, const kpnet::ModelWeights& start,
                            const at::Tensor& rates, const std::vector<std::string>& rate_layers,
                            PerStepBnStats& bn, const MetaConfig& config, const Batch& support,
                            const std::set<std::string>& mask, const InnerOptions& options);

/// Convenience form over a MetaState (mask from the state's mode).
AdaptTrajectory inner_adapt(const Learner& learner, MetaState& state, const Batch& support,
                            const InnerOptions& options);

using WarningSink = std::function<void(const std::string&)>;

/// Few-shot adaptation with the learned rates and frozen per-step statistics.
/// The returned weights carry the statistics set their evaluation should use.
kpnet::ModelWeights test_time_adapt(const Learner& learner, const MetaState& state,
                                    const Batch& support, const WarningSink& warn = {});

}  // namespace metakey::metacore
