#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "metakey/kpnet/model.hpp"
#include "metakey/metacore/config.hpp"

namespace metakey::metacore {

/// Learned inner-loop rates, one per (layer, step).
struct InnerRateTable {
  std::vector<std::string> layers;
  /// [#layers, N]
  at::Tensor rates;

  static InnerRateTable uniform(const kpnet::ModelWeights& weights, std::int64_t steps, double rate);
  std::int64_t steps() const { return rates.defined() ? rates.size(1) : 0; }
  std::int64_t layer_index(std::string_view layer) const;
  double rate(std::string_view layer, std::int64_t step) const;
};

/// One running-statistics set per inner step.
struct PerStepBnStats {
  std::vector<kpnet::BnStats> sets;

  kpnet::BnStats& set(std::int64_t index);
  const kpnet::BnStats& set(std::int64_t index) const;
  PerStepBnStats clone() const;
  bool identical(const PerStepBnStats& other) const;
};

/// Adam moments for the weights (flattened in layer/array order) followed
/// by the rate table.
struct AdamState {
  std::vector<at::Tensor> first;
  std::vector<at::Tensor> second;
  std::int64_t steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState clone() const;
};

struct MetaState {
  MetaConfig config;
  kpnet::ModelWeights weights;
  InnerRateTable rates;
  PerStepBnStats bn;
  AdamState optimizer;
  std::int64_t episode = 0;

  MetaState clone() const;
  bool identical(const MetaState& other) const;
};

/// Validates the config and the head group, sizes the rate table and the
/// statistics sets from the config.
MetaState make_meta_state(kpnet::ModelWeights weights, const MetaConfig& config);

/// Layers adapted in the inner loop: every layer, or the head group for ANIL.
std::set<std::string> adapt_mask(const kpnet::ModelWeights& weights, Mode mode);

}  // namespace metakey::metacore
