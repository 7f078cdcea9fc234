#include "metakey/metacore/meta_state.hpp"

#include <stdexcept>

namespace metakey::metacore {

InnerRateTable InnerRateTable::uniform(const kpnet::ModelWeights& weights, std::int64_t steps,
                                       double rate) {
  InnerRateTable t;
  t.layers = weights.layer_names();
  auto dtype = weights.layers.empty() ? at::kFloat
                                      : weights.layers.front().arrays.front().value.scalar_type();
  t.rates = at::full({static_cast<std::int64_t>(t.layers.size()), steps}, rate,
                     at::TensorOptions().dtype(dtype));
  return t;
}

std::int64_t InnerRateTable::layer_index(std::string_view layer) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] == layer) return static_cast<std::int64_t>(i);
  }
  throw std::out_of_range("rate table has no layer '" + std::string(layer) + "'");
}

double InnerRateTable::rate(std::string_view layer, std::int64_t step) const {
  return rates[layer_index(layer)][step].item<double>();
}

kpnet::BnStats& PerStepBnStats::set(std::int64_t index) {
  if (index < 0 || index >= static_cast<std::int64_t>(sets.size())) {
    throw std::out_of_range("statistics set " + std::to_string(index) + " is outside [0, " +
                            std::to_string(sets.size()) + ")");
  }
  return sets[static_cast<std::size_t>(index)];
}

const kpnet::BnStats& PerStepBnStats::set(std::int64_t index) const {
  return const_cast<PerStepBnStats*>(this)->set(index);
}

PerStepBnStats PerStepBnStats::clone() const {
  PerStepBnStats out;
  for (const auto& s : sets) out.sets.push_back(s.clone());
  return out;
}

bool PerStepBnStats::identical(const PerStepBnStats& other) const {
  if (sets.size() != other.sets.size()) return false;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (!sets[i].identical(other.sets[i])) return false;
  }
  return true;
}

AdamState AdamState::clone() const {
  AdamState out = *this;
  out.first.clear();
  out.second.clear();
  for (const auto& t : first) out.first.push_back(t.clone());
  for (const auto& t : second) out.second.push_back(t.clone());
  return out;
}

MetaState MetaState::clone() const {
  MetaState out;
  out.config = config;
  out.weights = weights.clone();
  out.rates.layers = rates.layers;
  out.rates.rates = rates.rates.detach().clone();
  out.bn = bn.clone();
  out.optimizer = optimizer.clone();
  out.episode = episode;
  return out;
}

bool MetaState::identical(const MetaState& other) const {
  if (!(config == other.config) || episode != other.episode) return false;
  if (!weights.identical(other.weights)) return false;
  if (rates.layers != other.rates.layers || !at::equal(rates.rates, other.rates.rates)) return false;
  if (!bn.identical(other.bn)) return false;
  const auto& a = optimizer;
  const auto& b = other.optimizer;
  if (a.steps != b.steps || a.first.size() != b.first.size() || a.second.size() != b.second.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.first.size(); ++i) {
    if (!at::equal(a.first[i], b.first[i]) || !at::equal(a.second[i], b.second[i])) return false;
  }
  return true;
}

MetaState make_meta_state(kpnet::ModelWeights weights, const MetaConfig& config) {
  config.validate();
  kpnet::validate_weights(weights);
  MetaState s;
  s.config = config;
  s.rates = InnerRateTable::uniform(weights, config.inner_steps, config.inner_rate_init);
  for (std::int64_t i = 0; i < config.bn_set_count(); ++i) {
    s.bn.sets.push_back(kpnet::fresh_bn_stats(weights));
  }
  s.weights = std::move(weights);
  return s;
}

std::set<std::string> adapt_mask(const kpnet::ModelWeights& weights, Mode mode) {
  const auto names = mode == Mode::anil_pp ? weights.head_layers() : weights.layer_names();
  if (mode == Mode::anil_pp && names.empty()) {
    throw std::invalid_argument("ANIL needs a layer group tagged head");
  }
  return {names.begin(), names.end()};
}

}  // namespace metakey::metacore
