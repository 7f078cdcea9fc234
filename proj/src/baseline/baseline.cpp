#include "metakey/baseline/baseline.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "metakey/common/seed.hpp"
#include "metakey/kpnet/loss.hpp"
#include "metakey/metacore/adam.hpp"
#include "metakey/metacore/adapt.hpp"
#include "metakey/metacore/outer.hpp"

namespace metakey::baseline {

void BaselineConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("baseline epochs must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("baseline lr must be positive");
  if (batch <= 0) throw std::invalid_argument("baseline batch must be positive");
  if (finetune_steps < 0) throw std::invalid_argument("finetune steps must be >= 0");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
    throw std::invalid_argument("bn momentum must lie in (0, 1]");
  }
}

BaselineState BaselineState::clone() const {
  return {weights.clone(), optimizer.clone(), epoch};
}

bool BaselineState::identical(const BaselineState& other) const {
  if (epoch != other.epoch || !weights.identical(other.weights)) return false;
  const auto& a = optimizer;
  const auto& b = other.optimizer;
  if (a.steps != b.steps || a.first.size() != b.first.size()) return false;
  for (std::size_t i = 0; i < a.first.size(); ++i) {
    if (!at::equal(a.first[i], b.first[i]) || !at::equal(a.second[i], b.second[i])) return false;
  }
  return true;
}

std::vector<std::size_t> epoch_order(std::size_t image_count, std::uint64_t seed,
                                     std::int64_t epoch) {
  std::vector<std::size_t> order(image_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng({seed, 0xBA5EULL, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = image_count; i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(rng, i)]);
  }
  return order;
}

namespace {

std::vector<taskdata::Sample> flat_samples(const taskdata::Split& split) {
  std::vector<taskdata::Sample> out;
  for (const auto& t : split.tasks()) out.insert(out.end(), t.samples.begin(), t.samples.end());
  return out;
}

}  // namespace

double train_epoch(const metacore::Learner& learner, BaselineState& state,
                   const taskdata::Split& split, const BaselineConfig& config, std::uint64_t seed) {
  config.validate();
  if (split.empty() || split.image_count() == 0) {
    throw std::invalid_argument("cannot train on an empty split");
  }
  const auto samples = flat_samples(split);
  const auto order = epoch_order(samples.size(), seed, state.epoch);
  const auto dtype = state.weights.layers.front().arrays.front().value.scalar_type();

  double total = 0.0;
  std::int64_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
    std::vector<taskdata::Sample> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(samples[order[i]]);
    const auto batch = metacore::make_batch(chunk, dtype);

    kpnet::ModelWeights leaves = state.weights.detached();
    for (auto& l : leaves.layers) {
      for (auto& a : l.arrays) a.value.requires_grad_(true);
    }
    kpnet::BnContext ctx;
    ctx.mode = kpnet::BnMode::train_accumulate;
    ctx.stats = &state.weights.running;
    ctx.momentum = config.bn_momentum;
    at::Tensor loss = learner.loss(leaves, batch, ctx);
    kpnet::require_finite(loss, "epoch " + std::to_string(state.epoch) + ", batch " +
                                    std::to_string(batches) + ", training loss");
    auto params = metacore::flatten_arrays(leaves);
    auto grads = torch::autograd::grad({loss}, params, {}, false, false, true);
    for (std::size_t j = 0; j < grads.size(); ++j) {
      if (!grads[j].defined()) grads[j] = at::zeros_like(params[j]);
      params[j] = params[j].detach();
    }
    metacore::adam_step(params, grads, state.optimizer, config.lr);
    std::size_t j = 0;
    for (auto& l : state.weights.layers) {
      for (auto& a : l.arrays) a.value = params[j++];
    }
    total += loss.detach().to(at::kDouble).item<double>();
    ++batches;
  }
  state.epoch += 1;
  return total / static_cast<double>(batches);
}

double plain_val_loss(const metacore::Learner& learner, const kpnet::ModelWeights& weights,
                      const taskdata::Split& val) {
  if (val.image_count() == 0) throw std::invalid_argument("validation split has no images");
  at::NoGradGuard no_grad;
  const auto dtype = weights.layers.front().arrays.front().value.scalar_type();
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : val.tasks()) {
    if (t.samples.empty()) continue;
    const auto batch = metacore::make_batch(t.samples, dtype);
    kpnet::BnContext ctx;
    ctx.mode = kpnet::BnMode::eval_frozen;
    at::Tensor per = learner.report_loss_per_sample(weights, batch, ctx);
    sum += per.sum().to(at::kDouble).item<double>();
    n += t.samples.size();
  }
  return sum / static_cast<double>(n);
}

std::vector<EpochCheckpoint> train_conventional(const metacore::Learner& learner,
                                                BaselineState initial, const taskdata::Split& train,
                                                const taskdata::Split& val,
                                                const BaselineConfig& config, std::uint64_t seed,
                                                std::int64_t interval) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("training split is empty");
  if (interval <= 0) throw std::invalid_argument("validation interval must be positive");
  std::vector<EpochCheckpoint> series;
  BaselineState state = std::move(initial);
  series.push_back({state.epoch, state.clone(), plain_val_loss(learner, state.weights, val)});
  while (state.epoch < config.epochs) {
    train_epoch(learner, state, train, config, seed);
    if (state.epoch % interval == 0 || state.epoch == config.epochs) {
      series.push_back({state.epoch, state.clone(), plain_val_loss(learner, state.weights, val)});
    }
  }
  return series;
}

FinetuneResult finetune_baseline(const metacore::Learner& learner, const kpnet::ModelWeights& weights,
                                 const metacore::Batch& support, double lr, std::int64_t steps) {
  if (steps < 0) throw std::invalid_argument("finetune steps must be >= 0");
  const auto dtype = weights.layers.front().arrays.front().value.scalar_type();
  const at::Tensor rate = at::scalar_tensor(lr, at::TensorOptions().dtype(dtype));

  kpnet::BnContext ctx;
  ctx.mode = kpnet::BnMode::eval_frozen;
  auto finite_loss = [&](const kpnet::ModelWeights& w, at::Tensor& loss) {
    loss = learner.loss(w, support, ctx);
    return std::isfinite(loss.detach().to(at::kDouble).item<double>());
  };

  // `result` only ever holds an iterate whose support loss was finite.
  FinetuneResult result{weights.detached(), 0, false};
  kpnet::ModelWeights current = result.weights;
  for (std::int64_t i = 0; i <= steps; ++i) {
    for (auto& l : current.layers) {
      for (auto& a : l.arrays) a.value = a.value.detach().requires_grad_(i < steps);
    }
    at::Tensor loss;
    if (!finite_loss(current, loss)) {
      result.diverged = true;
      break;
    }
    if (i > 0) {
      result.weights = current.detached();
      result.steps_taken = i;
    }
    if (i == steps) break;

    auto grads = torch::autograd::grad({loss}, metacore::flatten_arrays(current), {}, false, false,
                                       true);
    kpnet::ModelWeights next;
    next.running = current.running;
    {
      at::NoGradGuard no_grad;
      std::size_t g = 0;
      for (const auto& layer : current.layers) {
        std::vector<at::Tensor> layer_grads(grads.begin() + static_cast<std::ptrdiff_t>(g),
                                            grads.begin() +
                                                static_cast<std::ptrdiff_t>(g + layer.arrays.size()));
        g += layer.arrays.size();
        next.layers.push_back(metacore::descend(layer, layer_grads, rate));
      }
    }
    current = next.detached();
  }
  return result;
}

}  // namespace metakey::baseline
