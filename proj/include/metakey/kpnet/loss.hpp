#pragma once

#include <stdexcept>

#include "metakey/common/torch.hpp"
#include "metakey/taskdata/types.hpp"

namespace metakey::kpnet {

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sum of L1 distances of the three keypoints: |dx|+|dy| for the vanishing
/// point, |dx| for each intercept. Pixels.
double keypoint_loss(const taskdata::KeypointLabel& pred, const taskdata::KeypointLabel& label);

/// Batch mean of the per-sample keypoint loss; [B, 4] inputs in pixels.
/// Throws NonFiniteLoss when the result is not finite.
at::Tensor keypoint_loss(const at::Tensor& pred, const at::Tensor& target);

/// Per-sample keypoint loss, [B].
at::Tensor keypoint_loss_per_sample(const at::Tensor& pred, const at::Tensor& target);

/// Training objective: mean absolute residual over the four predicted
/// coordinates, x residuals divided by (W - 1) and y residuals by (H - 1).
/// Equals keypoint_loss / 4 on a square image up to the axis scaling.
at::Tensor normalized_keypoint_loss(const at::Tensor& pred, const at::Tensor& target, int height,
                                    int width);

/// Throws NonFiniteLoss (with `context`) unless the scalar tensor is finite.
void require_finite(const at::Tensor& loss, const std::string& context);

}  // namespace metakey::kpnet
