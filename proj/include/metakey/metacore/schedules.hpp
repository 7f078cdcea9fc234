#pragma once

#include <cstdint>
#include <vector>

#include "metakey/metacore/config.hpp"

namespace metakey::metacore {

/// Per-step weights of the multi-step query loss. Uniform 1/N at episode 0,
/// annealed linearly to (0, ..., 0, 1), reached at msl_fraction * T.
std::vector<double> msl_weights(std::int64_t episode, const MetaConfig& cfg);

/// beta_min + (beta - beta_min) * (1 + cos(pi * e / (T - 1))) / 2
double cosine_outer_rate(std::int64_t episode, const MetaConfig& cfg);

enum class DerivativeOrder { first, second };

/// First order while episode < first_order_fraction * T.
DerivativeOrder derivative_order(std::int64_t episode, const MetaConfig& cfg);

}  // namespace metakey::metacore
