#include "metakey/metacore/adapt.hpp"

#include <map>
#include <optional>
#include <stdexcept>

#include "metakey/kpnet/loss.hpp"

namespace metakey::metacore {

kpnet::Layer descend(const kpnet::Layer& layer, const std::vector<at::Tensor>& grads,
                     const at::Tensor& rate) {
  if (grads.size() != layer.arrays.size()) {
    throw std::invalid_argument("gradient count does not match layer '" + layer.name + "'");
  }
  kpnet::Layer out{layer.name, layer.kind, {}};
  out.arrays.reserve(layer.arrays.size());
  for (std::size_t j = 0; j < layer.arrays.size(); ++j) {
    const auto& a = layer.arrays[j];
    if (!grads[j].defined()) {
      out.arrays.push_back(a);  // array does not reach the loss
    } else {
      out.arrays.push_back({a.name, a.value - rate * grads[j]});
    }
  }
  return out;
}

AdaptTrajectory inner_adapt(const Learner& learner, const kpnet::ModelWeights& start,
                            const at::Tensor& rates, const std::vector<std::string>& rate_layers,
                            PerStepBnStats& bn, const MetaConfig& config, const Batch& support,
                            const std::set<std::string>& mask, const InnerOptions& options) {
  const std::int64_t steps = config.inner_steps;
  if (steps > 0 && (!rates.defined() || rates.dim() != 2 || rates.size(1) < steps ||
                    rates.size(0) != static_cast<std::int64_t>(rate_layers.size()))) {
    throw std::invalid_argument("rate table must be [#layers, >= N]");
  }
  std::map<std::string, std::int64_t, std::less<>> rate_row;
  for (std::size_t i = 0; i < rate_layers.size(); ++i) {
    rate_row.emplace(rate_layers[i], static_cast<std::int64_t>(i));
  }
  for (const auto& name : mask) {
    if (steps > 0 && !rate_row.contains(name)) {
      throw std::invalid_argument("no inner rate for adapted layer '" + name + "'");
    }
  }

  const bool track = options.track_gradients;
  const bool create_graph = track && options.second_order;
  const at::Tensor step_rates = track ? rates : (rates.defined() ? rates.detach() : rates);

  AdaptTrajectory traj;
  traj.weights.reserve(static_cast<std::size_t>(steps) + 1);
  traj.weights.push_back(start);

  for (std::int64_t i = 0; i < steps; ++i) {
    kpnet::ModelWeights current = traj.weights.back();
    if (!track) {
      for (auto& layer : current.layers) {
        if (!mask.contains(layer.name)) continue;
        for (auto& a : layer.arrays) a.value = a.value.detach().requires_grad_(true);
      }
    }

    kpnet::BnContext ctx;
    ctx.mode = options.bn_phase == BnPhase::accumulate ? kpnet::BnMode::accumulate_frozen
                                                       : kpnet::BnMode::eval_frozen;
    ctx.stats = &bn.set(config.bn_set_for_step(i));
    ctx.momentum = config.bn_momentum;

    at::Tensor loss = learner.loss(current, support, ctx);
    kpnet::require_finite(loss, "episode " + std::to_string(options.episode) + ", inner step " +
                                    std::to_string(i) + ", support loss");

    std::vector<at::Tensor> inputs;
    for (const auto& layer : current.layers) {
      if (!mask.contains(layer.name)) continue;
      for (const auto& a : layer.arrays) inputs.push_back(a.value);
    }
    std::vector<at::Tensor> grads;
    if (!inputs.empty()) {
      grads = torch::autograd::grad({loss}, inputs, {}, /*retain_graph=*/track, create_graph,
                                    /*allow_unused=*/true);
    }

    kpnet::ModelWeights next;
    next.running = current.running;
    {
      std::optional<at::NoGradGuard> no_grad;
      if (!track) no_grad.emplace();
      std::size_t g = 0;
      for (const auto& layer : current.layers) {
        if (!mask.contains(layer.name)) {
          next.layers.push_back(layer);
          continue;
        }
        std::vector<at::Tensor> layer_grads(grads.begin() + static_cast<std::ptrdiff_t>(g),
                                            grads.begin() +
                                                static_cast<std::ptrdiff_t>(g + layer.arrays.size()));
        g += layer.arrays.size();
        const at::Tensor rate = step_rates.select(0, rate_row.find(layer.name)->second).select(0, i);
        next.layers.push_back(descend(layer, layer_grads, rate));
      }
    }
    if (!track) {
      for (auto& layer : next.layers) {
        for (auto& a : layer.arrays) a.value = a.value.detach();
      }
    }
    traj.support_losses.push_back(loss.detach().to(at::kDouble).item<double>());
    traj.weights.push_back(std::move(next));
  }
  if (!track && steps > 0) {
    // The starting point should not hold on to leaves created above.
    traj.weights.front() = start;
  }
  return traj;
}

AdaptTrajectory inner_adapt(const Learner& learner, MetaState& state, const Batch& support,
                            const InnerOptions& options) {
  return inner_adapt(learner, state.weights, state.rates.rates, state.rates.layers, state.bn,
                     state.config, support, adapt_mask(state.weights, state.config.mode), options);
}

kpnet::ModelWeights test_time_adapt(const Learner& learner, const MetaState& state,
                                    const Batch& support, const WarningSink& warn) {
  if (support.size() != state.config.k && warn) {
    warn("adapting on " + std::to_string(support.size()) + " support samples; the checkpoint was " +
         "meta-trained with k=" + std::to_string(state.config.k));
  }
  PerStepBnStats frozen = state.bn;  // eval_frozen never writes
  InnerOptions options;
  options.track_gradients = false;
  options.bn_phase = BnPhase::frozen;
  auto traj = inner_adapt(learner, state.weights.detached(), state.rates.rates.detach(),
                          state.rates.layers, frozen, state.config, support,
                          adapt_mask(state.weights, state.config.mode), options);
  kpnet::ModelWeights adapted = traj.final_weights();
  const auto n = state.config.inner_steps;
  adapted.running = n > 0 ? state.bn.set(state.config.bn_set_for_step(n - 1))
                          : state.weights.running;
  return adapted;
}

}  // namespace metakey::metacore
