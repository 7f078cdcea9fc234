#pragma once

#include <cstdint>
#include <string_view>

namespace metakey::metacore {

enum class Mode { maml, maml_pp, anil_pp };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view text);

/// Meta-training hyperparameters. Defaults are the published settings.
struct MetaConfig {
  std::int64_t episodes = 20000;
  std::int64_t meta_batch = 4;
  std::int64_t k = 5;
  std::int64_t q = 10;
  std::int64_t inner_steps = 3;
  double inner_rate_init = 0.4;
  double outer_rate = 0.001;
  double outer_rate_floor = 0.00001;
  double msl_fraction = 0.99;
  double first_order_fraction = 0.3;
  double bn_momentum = 0.1;
  Mode mode = Mode::maml_pp;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;

  // MAML++ features; vanilla MAML keeps fixed rates, a single statistics
  // set, final-step loss, exact second order and a constant outer rate.
  bool learns_rates() const { return mode != Mode::maml; }
  bool per_step_bn() const { return mode != Mode::maml; }
  bool multi_step_loss() const { return mode != Mode::maml; }
  bool anneals_derivative_order() const { return mode != Mode::maml; }
  bool cosine_annealing() const { return mode != Mode::maml; }
  /// Number of running-statistics sets the state carries.
  std::int64_t bn_set_count() const;
  /// Statistics set addressed by inner step `step`.
  std::int64_t bn_set_for_step(std::int64_t step) const;

  bool operator==(const MetaConfig&) const = default;
};

}  // namespace metakey::metacore
