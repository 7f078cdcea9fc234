#include "metakey/kpnet/loss.hpp"

#include <cmath>

namespace metakey::kpnet {

double keypoint_loss(const taskdata::KeypointLabel& pred, const taskdata::KeypointLabel& label) {
  const double loss = std::abs(pred.vanishing_point.x - label.vanishing_point.x) +
                      std::abs(pred.vanishing_point.y - label.vanishing_point.y) +
                      std::abs(pred.left_x - label.left_x) + std::abs(pred.right_x - label.right_x);
  if (!std::isfinite(loss)) throw NonFiniteLoss("keypoint loss is not finite");
  return loss;
}

at::Tensor keypoint_loss_per_sample(const at::Tensor& pred, const at::Tensor& target) {
  if (pred.dim() != 2 || pred.size(1) != 4 || !pred.sizes().equals(target.sizes())) {
    throw std::invalid_argument("keypoint tensors must both be [B, 4]");
  }
  // abs has a zero subgradient at 0.
  return (pred - target).abs().sum(1);
}

at::Tensor keypoint_loss(const at::Tensor& pred, const at::Tensor& target) {
  at::Tensor loss = keypoint_loss_per_sample(pred, target).mean();
  require_finite(loss, "keypoint loss");
  return loss;
}

at::Tensor normalized_keypoint_loss(const at::Tensor& pred, const at::Tensor& target, int height,
                                    int width) {
  if (pred.dim() != 2 || pred.size(1) != 4 || !pred.sizes().equals(target.sizes())) {
    throw std::invalid_argument("keypoint tensors must both be [B, 4]");
  }
  const double sx = 1.0 / std::max(width - 1, 1);
  const double sy = 1.0 / std::max(height - 1, 1);
  const at::Tensor scale =
      at::tensor({sx, sy, sx, sx}, at::TensorOptions().dtype(at::kDouble)).to(pred.scalar_type());
  return ((pred - target).abs() * scale).mean();
}

void require_finite(const at::Tensor& loss, const std::string& context) {
  const double v = loss.detach().to(at::kDouble).item<double>();
  if (!std::isfinite(v)) throw NonFiniteLoss("non-finite loss (" + context + ")");
}

}  // namespace metakey::kpnet
