#pragma once

#include <vector>

#include "metakey/metacore/meta_state.hpp"

namespace metakey::metacore {

/// One Adam update of `params` (replaced out of place). Moments are created
/// lazily on the first call and must keep the same layout afterwards.
void adam_step(std::vector<at::Tensor>& params, const std::vector<at::Tensor>& grads,
               AdamState& opt, double lr);

}  // namespace metakey::metacore
