#pragma once

#include <vector>

#include "metakey/metacore/adapt.hpp"
#include "metakey/metacore/schedules.hpp"

namespace metakey::metacore {

struct MetaGradient {
  double meta_loss = 0.0;
  /// Aligned with the weights' layers and arrays, flattened.
  std::vector<at::Tensor> weights;
  /// [#layers, N]; zeros when the mode keeps rates fixed.
  at::Tensor rates;
  DerivativeOrder order = DerivativeOrder::second;
  std::vector<double> step_weights;
};

/// Mean over the batch of sum_i w_i * L_query(theta'_{i+1}), differentiated
/// with respect to the weights and rates through the inner trajectory.
/// Accumulates the support passes into the per-step statistics sets.
MetaGradient meta_gradient(const Learner& learner, MetaState& state,
                           const std::vector<TaskBatch>& batch, std::int64_t episode);

/// meta_gradient followed by one Adam update at the scheduled outer rate;
/// advances state.episode. Returns the meta-loss.
double outer_step(const Learner& learner, MetaState& state, const std::vector<TaskBatch>& batch);

/// Flat view of weight arrays in layer/array order.
std::vector<at::Tensor> flatten_arrays(const kpnet::ModelWeights& weights);

}  // namespace metakey::metacore
