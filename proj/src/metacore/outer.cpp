#include "metakey/metacore/outer.hpp"

#include <cmath>
#include <stdexcept>

#include "metakey/kpnet/loss.hpp"
#include "metakey/metacore/adam.hpp"

namespace metakey::metacore {

std::vector<at::Tensor> flatten_arrays(const kpnet::ModelWeights& weights) {
  std::vector<at::Tensor> out;
  for (const auto& l : weights.layers) {
    for (const auto& a : l.arrays) out.push_back(a.value);
  }
  return out;
}

MetaGradient meta_gradient(const Learner& learner, MetaState& state,
                           const std::vector<TaskBatch>& batch, std::int64_t episode) {
  const MetaConfig& cfg = state.config;
  if (batch.empty()) throw std::invalid_argument("meta_gradient needs at least one task");
  if (episode < 0 || episode >= cfg.episodes) {
    throw std::out_of_range("episode " + std::to_string(episode) + " is outside [0, " +
                            std::to_string(cfg.episodes) + ")");
  }

  MetaGradient result;
  result.order = cfg.anneals_derivative_order() ? derivative_order(episode, cfg)
                                                : DerivativeOrder::second;
  const std::int64_t n = cfg.inner_steps;
  if (cfg.multi_step_loss()) {
    result.step_weights = msl_weights(episode, cfg);
  } else if (n > 0) {
    result.step_weights.assign(static_cast<std::size_t>(n), 0.0);
    result.step_weights.back() = 1.0;
  }

  kpnet::ModelWeights leaves = state.weights.detached();
  for (auto& l : leaves.layers) {
    for (auto& a : l.arrays) a.value.requires_grad_(true);
  }
  at::Tensor rate_leaf = state.rates.rates.detach();
  if (cfg.learns_rates()) rate_leaf.requires_grad_(true);

  std::vector<at::Tensor> inputs = flatten_arrays(leaves);
  const std::size_t n_weights = inputs.size();
  if (cfg.learns_rates()) inputs.push_back(rate_leaf);

  const auto mask = adapt_mask(leaves, cfg.mode);
  InnerOptions options;
  options.track_gradients = true;
  options.second_order = result.order == DerivativeOrder::second;
  options.bn_phase = BnPhase::accumulate;
  options.episode = episode;

  std::vector<at::Tensor> accum(inputs.size());
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const TaskBatch& tb = batch[e];
    auto traj = inner_adapt(learner, leaves, rate_leaf, state.rates.layers, state.bn, cfg,
                            tb.support, mask, options);

    at::Tensor objective;
    if (n == 0) {
      kpnet::BnContext ctx;
      ctx.mode = kpnet::BnMode::eval_frozen;
      objective = learner.loss(leaves, tb.query, ctx);
    } else {
      for (std::int64_t i = 0; i < n; ++i) {
        const double w = result.step_weights[static_cast<std::size_t>(i)];
        if (w == 0.0) continue;
        // Snapshot: later support passes update the sets in place.
        kpnet::BnStats snapshot = state.bn.set(cfg.bn_set_for_step(i)).clone();
        kpnet::BnContext ctx;
        ctx.mode = kpnet::BnMode::eval_frozen;
        ctx.stats = &snapshot;
        at::Tensor term = learner.loss(traj.weights[static_cast<std::size_t>(i) + 1], tb.query, ctx);
        objective = objective.defined() ? objective + w * term : w * term;
      }
    }
    kpnet::require_finite(objective, "episode " + std::to_string(episode) + ", task " +
                                         std::to_string(e) + ", meta-objective");

    auto grads = torch::autograd::grad({objective * inv_batch}, inputs, {},
                                       /*retain_graph=*/false, /*create_graph=*/false,
                                       /*allow_unused=*/true);
    for (std::size_t j = 0; j < grads.size(); ++j) {
      if (!grads[j].defined()) continue;
      accum[j] = accum[j].defined() ? accum[j] + grads[j] : grads[j];
    }
    total += objective.detach().to(at::kDouble).item<double>();
  }

  result.meta_loss = total * inv_batch;
  for (std::size_t j = 0; j < n_weights; ++j) {
    result.weights.push_back(accum[j].defined() ? accum[j] : at::zeros_like(inputs[j].detach()));
  }
  if (cfg.learns_rates() && accum.back().defined()) {
    result.rates = accum.back();
  } else {
    result.rates = at::zeros_like(state.rates.rates);
  }
  return result;
}

double outer_step(const Learner& learner, MetaState& state, const std::vector<TaskBatch>& batch) {
  const std::int64_t episode = state.episode;
  if (episode >= state.config.episodes) {
    throw std::out_of_range("meta-training already ran all " +
                            std::to_string(state.config.episodes) + " episodes");
  }
  MetaGradient g = meta_gradient(learner, state, batch, episode);
  const double lr = state.config.cosine_annealing() ? cosine_outer_rate(episode, state.config)
                                                    : state.config.outer_rate;

  std::vector<at::Tensor> params = flatten_arrays(state.weights);
  params.push_back(state.rates.rates);
  g.weights.push_back(g.rates);
  adam_step(params, g.weights, state.optimizer, lr);

  std::size_t j = 0;
  for (auto& l : state.weights.layers) {
    for (auto& a : l.arrays) a.value = params[j++];
  }
  // Fixed-rate modes still carry a zero gradient for the table; Adam leaves
  // it in place.
  if (state.config.learns_rates()) state.rates.rates = params[j];
  state.episode += 1;
  return g.meta_loss;
}

}  // namespace metakey::metacore
