#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "metakey/common/torch.hpp"
#include "metakey/taskdata/types.hpp"

namespace metakey::kpnet {

enum class HeadKind { direct_regression, heatmap_soft_argmax };
enum class LayerKind { conv, batchnorm, head };

std::string_view to_string(HeadKind h);
HeadKind parse_head_kind(std::string_view text);
std::string_view to_string(LayerKind k);
LayerKind parse_layer_kind(std::string_view text);

/// Encoder: one block per width, conv3x3 -> batchnorm -> relu -> 2x2 average
/// pool. Decoder: bilinear 2x upsample, concat the encoder skip of the same
/// resolution, conv3x3 -> relu. Head decodes four keypoint scalars.
struct ModelConfig {
  int height = 128;
  int width = 128;
  std::vector<int> encoder_widths{16, 32, 64, 64};
  int decoder_stages = 2;
  int decoder_width = 32;
  HeadKind head = HeadKind::direct_regression;
  /// Channels of the 1x1 head conv feeding the regression layer.
  int head_channels = 4;
  bool batchnorm = true;

  /// Throws std::invalid_argument on inconsistent shapes or missing batchnorm.
  void validate() const;
  int feature_height() const;  // resolution the head sees
  int feature_width() const;
  bool operator==(const ModelConfig&) const = default;
};

struct NamedArray {
  std::string name;
  at::Tensor value;
};

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::conv;
  std::vector<NamedArray> arrays;

  const at::Tensor& array(std::string_view name) const;
};

struct BnLayerStats {
  std::string layer;
  at::Tensor mean;
  at::Tensor var;
  std::int64_t count = 0;
};

/// One set of batchnorm running statistics, one entry per batchnorm layer.
struct BnStats {
  std::vector<BnLayerStats> layers;

  BnStats clone() const;
  BnLayerStats& at(std::string_view layer);
  const BnLayerStats& at(std::string_view layer) const;
  /// Bitwise comparison of every array and count.
  bool identical(const BnStats& other) const;
};

/// Network parameters plus the running statistics used when they are
/// evaluated with frozen batchnorm.
struct ModelWeights {
  std::vector<Layer> layers;
  BnStats running;

  const Layer& layer(std::string_view name) const;
  Layer& layer(std::string_view name);
  bool has_layer(std::string_view name) const;
  std::int64_t parameter_count() const;
  std::vector<std::string> layer_names() const;
  std::vector<std::string> head_layers() const;
  std::vector<std::string> batchnorm_layers() const;

  /// Deep copy with autograd history dropped.
  ModelWeights clone() const;
  /// Shares storage, drops autograd history.
  ModelWeights detached() const;
  ModelWeights to(at::ScalarType dtype) const;
  bool identical(const ModelWeights& other) const;
};

/// Unique layer names and exactly one contiguous trailing head group.
void validate_weights(const ModelWeights& w);

/// Fresh running statistics (mean 0, variance 1) for every batchnorm layer.
BnStats fresh_bn_stats(const ModelWeights& w);

/// Parameter count implied by a config, computed from shapes alone.
std::int64_t expected_parameter_count(const ModelConfig& config);

/// Seeded initialisation; batchnorm layers start as the identity transform.
ModelWeights init_model(const ModelConfig& config, std::uint64_t seed,
                        at::ScalarType dtype = at::kFloat);

enum class BnMode {
  batch_stats,       // normalise with batch statistics, touch nothing
  train_accumulate,  // batch statistics, fold them into `stats`
  eval_frozen,       // normalise with `stats`, read-only
  /// Fold batch statistics into `stats`, then normalise with the updated
  /// `stats` as constants. Forward passes match eval_frozen up to the fold.
  accumulate_frozen,
};

struct BnContext {
  BnMode mode = BnMode::eval_frozen;
  /// Target for train_accumulate, source for eval_frozen. Falls back to
  /// weights.running when null.
  BnStats* stats = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};

struct Prediction {
  /// [B, 4] pixels: vp_x, vp_y, left_x, right_x.
  at::Tensor keypoints;
  /// [B, 3, h, w] spatial softmax maps for heatmap_soft_argmax; undefined otherwise.
  at::Tensor heatmaps;
};

Prediction forward(const ModelConfig& config, const ModelWeights& weights, const at::Tensor& images,
                   BnContext bn);

/// Soft-argmax of [B, C, h, w] logits mapped to pixel centres of an H x W
/// image. Returns ([B, C] x, [B, C] y, [B, C, h, w] normalised maps).
std::tuple<at::Tensor, at::Tensor, at::Tensor> soft_argmax(const at::Tensor& logits, int height,
                                                           int width);

/// [B, 3, H, W] tensor from samples' HWC images.
at::Tensor images_to_tensor(const std::vector<taskdata::Sample>& samples,
                            at::ScalarType dtype = at::kFloat);
/// [B, 4] tensor of labels in the prediction layout.
at::Tensor labels_to_tensor(const std::vector<taskdata::Sample>& samples,
                            at::ScalarType dtype = at::kFloat);
taskdata::KeypointLabel label_from_row(const at::Tensor& row);

}  // namespace metakey::kpnet
