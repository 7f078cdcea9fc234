#include "metakey/kpnet/model.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "metakey/common/seed.hpp"

namespace metakey::kpnet {

std::string_view to_string(HeadKind h) {
  return h == HeadKind::direct_regression ? "direct_regression" : "heatmap_soft_argmax";
}

HeadKind parse_head_kind(std::string_view text) {
  if (text == "direct_regression") return HeadKind::direct_regression;
  if (text == "heatmap_soft_argmax") return HeadKind::heatmap_soft_argmax;
  throw std::invalid_argument("unknown head kind '" + std::string(text) + "'");
}

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv:
      return "conv";
    case LayerKind::batchnorm:
      return "batchnorm";
    case LayerKind::head:
      return "head";
  }
  return "conv";
}

LayerKind parse_layer_kind(std::string_view text) {
  if (text == "conv") return LayerKind::conv;
  if (text == "batchnorm") return LayerKind::batchnorm;
  if (text == "head") return LayerKind::head;
  throw std::invalid_argument("unknown layer kind '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  if (height <= 0 || width <= 0) throw std::invalid_argument("model input size must be positive");
  if (encoder_widths.empty()) throw std::invalid_argument("encoder needs at least one block");
  for (int w : encoder_widths) {
    if (w <= 0) throw std::invalid_argument("encoder widths must be positive");
  }
  if (!batchnorm) {
    throw std::invalid_argument("model config has no batchnorm layer; per-step statistics need one");
  }
  const int blocks = static_cast<int>(encoder_widths.size());
  const int div = 1 << blocks;
  if (height % div != 0 || width % div != 0) {
    throw std::invalid_argument("input size must be divisible by 2^" + std::to_string(blocks));
  }
  if (decoder_stages < 0 || decoder_stages > blocks - 1) {
    throw std::invalid_argument("decoder stages must lie in [0, encoder blocks - 1]");
  }
  if (decoder_stages > 0 && decoder_width <= 0) {
    throw std::invalid_argument("decoder width must be positive");
  }
  if (head == HeadKind::direct_regression && head_channels <= 0) {
    throw std::invalid_argument("head channels must be positive");
  }
}

int ModelConfig::feature_height() const {
  const int blocks = static_cast<int>(encoder_widths.size());
  return (height >> blocks) << decoder_stages;
}

int ModelConfig::feature_width() const {
  const int blocks = static_cast<int>(encoder_widths.size());
  return (width >> blocks) << decoder_stages;
}

const at::Tensor& Layer::array(std::string_view array_name) const {
  for (const auto& a : arrays) {
    if (a.name == array_name) return a.value;
  }
  throw std::out_of_range("layer '" + name + "' has no array '" + std::string(array_name) + "'");
}

BnStats BnStats::clone() const {
  BnStats out;
  for (const auto& l : layers) {
    out.layers.push_back({l.layer, l.mean.detach().clone(), l.var.detach().clone(), l.count});
  }
  return out;
}

BnLayerStats& BnStats::at(std::string_view layer) {
  for (auto& l : layers) {
    if (l.layer == layer) return l;
  }
  throw std::out_of_range("no running statistics for layer '" + std::string(layer) + "'");
}

const BnLayerStats& BnStats::at(std::string_view layer) const {
  return const_cast<BnStats*>(this)->at(layer);
}

bool BnStats::identical(const BnStats& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.layer != b.layer || a.count != b.count || !at::equal(a.mean, b.mean) ||
        !at::equal(a.var, b.var)) {
      return false;
    }
  }
  return true;
}

const Layer& ModelWeights::layer(std::string_view name) const {
  for (const auto& l : layers) {
    if (l.name == name) return l;
  }
  throw std::out_of_range("no layer named '" + std::string(name) + "'");
}

Layer& ModelWeights::layer(std::string_view name) {
  return const_cast<Layer&>(static_cast<const ModelWeights*>(this)->layer(name));
}

bool ModelWeights::has_layer(std::string_view name) const {
  for (const auto& l : layers) {
    if (l.name == name) return true;
  }
  return false;
}

std::int64_t ModelWeights::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& l : layers) {
    for (const auto& a : l.arrays) n += a.value.numel();
  }
  return n;
}

std::vector<std::string> ModelWeights::layer_names() const {
  std::vector<std::string> out;
  for (const auto& l : layers) out.push_back(l.name);
  return out;
}

std::vector<std::string> ModelWeights::head_layers() const {
  std::vector<std::string> out;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::head) out.push_back(l.name);
  }
  return out;
}

std::vector<std::string> ModelWeights::batchnorm_layers() const {
  std::vector<std::string> out;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::batchnorm) out.push_back(l.name);
  }
  return out;
}

ModelWeights ModelWeights::clone() const {
  ModelWeights out;
  for (const auto& l : layers) {
    Layer c{l.name, l.kind, {}};
    for (const auto& a : l.arrays) c.arrays.push_back({a.name, a.value.detach().clone()});
    out.layers.push_back(std::move(c));
  }
  out.running = running.clone();
  return out;
}

ModelWeights ModelWeights::detached() const {
  ModelWeights out;
  for (const auto& l : layers) {
    Layer c{l.name, l.kind, {}};
    for (const auto& a : l.arrays) c.arrays.push_back({a.name, a.value.detach()});
    out.layers.push_back(std::move(c));
  }
  out.running = running;
  return out;
}

ModelWeights ModelWeights::to(at::ScalarType dtype) const {
  ModelWeights out;
  for (const auto& l : layers) {
    Layer c{l.name, l.kind, {}};
    for (const auto& a : l.arrays) c.arrays.push_back({a.name, a.value.detach().to(dtype).clone()});
    out.layers.push_back(std::move(c));
  }
  for (const auto& s : running.layers) {
    out.running.layers.push_back({s.layer, s.mean.to(dtype).clone(), s.var.to(dtype).clone(), s.count});
  }
  return out;
}

bool ModelWeights::identical(const ModelWeights& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.name != b.name || a.kind != b.kind || a.arrays.size() != b.arrays.size()) return false;
    for (std::size_t j = 0; j < a.arrays.size(); ++j) {
      if (a.arrays[j].name != b.arrays[j].name || !at::equal(a.arrays[j].value, b.arrays[j].value)) {
        return false;
      }
    }
  }
  return running.identical(other.running);
}

void validate_weights(const ModelWeights& w) {
  std::set<std::string> names;
  for (const auto& l : w.layers) {
    if (!names.insert(l.name).second) {
      throw std::invalid_argument("duplicate layer name '" + l.name + "'");
    }
  }
  std::size_t first_head = w.layers.size();
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    if (w.layers[i].kind == LayerKind::head) {
      first_head = i;
      break;
    }
  }
  if (first_head == w.layers.size()) {
    throw std::invalid_argument("model has no layer tagged head");
  }
  for (std::size_t i = first_head; i < w.layers.size(); ++i) {
    if (w.layers[i].kind != LayerKind::head) {
      throw std::invalid_argument("head layers must form one trailing group; '" + w.layers[i].name +
                                  "' follows the head");
    }
  }
}

BnStats fresh_bn_stats(const ModelWeights& w) {
  BnStats stats;
  for (const auto& l : w.layers) {
    if (l.kind != LayerKind::batchnorm) continue;
    const auto& scale = l.array("weight");
    stats.layers.push_back({l.name, at::zeros_like(scale.detach()), at::ones_like(scale.detach()), 0});
  }
  return stats;
}

namespace {

std::string enc_name(std::size_t b, const char* part) {
  return "enc" + std::to_string(b) + "." + part;
}

int skip_channels(const ModelConfig& c, int stage) {
  const int blocks = static_cast<int>(c.encoder_widths.size());
  return c.encoder_widths[static_cast<std::size_t>(blocks - 2 - stage)];
}

at::Tensor gaussian_tensor(at::IntArrayRef shape, double std, Rng& rng, at::ScalarType dtype) {
  at::Tensor t = at::empty(shape, at::TensorOptions().dtype(at::kDouble));
  auto* p = t.data_ptr<double>();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = std * gaussian(rng);
  return t.to(dtype);
}

}  // namespace

std::int64_t expected_parameter_count(const ModelConfig& c) {
  c.validate();
  std::int64_t n = 0;
  int in = 3;
  for (int w : c.encoder_widths) {
    n += static_cast<std::int64_t>(w) * in * 9 + w;  // conv
    n += 2 * w;                                       // batchnorm scale and shift
    in = w;
  }
  for (int s = 0; s < c.decoder_stages; ++s) {
    n += static_cast<std::int64_t>(c.decoder_width) * (in + skip_channels(c, s)) * 9 + c.decoder_width;
    in = c.decoder_width;
  }
  const std::int64_t fh = c.feature_height();
  const std::int64_t fw = c.feature_width();
  if (c.head == HeadKind::direct_regression) {
    n += static_cast<std::int64_t>(c.head_channels) * in + c.head_channels;
    n += 4 * c.head_channels * fh * fw + 4;
  } else {
    n += 3 * in + 3;
  }
  return n;
}

ModelWeights init_model(const ModelConfig& c, std::uint64_t seed, at::ScalarType dtype) {
  c.validate();
  Rng rng = make_rng({seed, 0x1417ULL});
  ModelWeights w;
  auto conv_layer = [&](std::string name, LayerKind kind, int out, int in, int k) {
    const double std = std::sqrt(2.0 / (in * k * k));
    Layer l{std::move(name), kind, {}};
    l.arrays.push_back({"weight", gaussian_tensor({out, in, k, k}, std, rng, dtype)});
    l.arrays.push_back({"bias", at::zeros({out}, at::TensorOptions().dtype(dtype))});
    return l;
  };

  int in = 3;
  for (std::size_t b = 0; b < c.encoder_widths.size(); ++b) {
    const int out = c.encoder_widths[b];
    w.layers.push_back(conv_layer(enc_name(b, "conv"), LayerKind::conv, out, in, 3));
    Layer bn{enc_name(b, "bn"), LayerKind::batchnorm, {}};
    bn.arrays.push_back({"weight", at::ones({out}, at::TensorOptions().dtype(dtype))});
    bn.arrays.push_back({"bias", at::zeros({out}, at::TensorOptions().dtype(dtype))});
    w.layers.push_back(std::move(bn));
    in = out;
  }
  for (int s = 0; s < c.decoder_stages; ++s) {
    w.layers.push_back(conv_layer("dec" + std::to_string(s) + ".conv", LayerKind::conv,
                                  c.decoder_width, in + skip_channels(c, s), 3));
    in = c.decoder_width;
  }
  if (c.head == HeadKind::direct_regression) {
    w.layers.push_back(conv_layer("head.conv", LayerKind::head, c.head_channels, in, 1));
    const std::int64_t features =
        static_cast<std::int64_t>(c.head_channels) * c.feature_height() * c.feature_width();
    Layer fc{"head.fc", LayerKind::head, {}};
    fc.arrays.push_back(
        {"weight", gaussian_tensor({4, features}, 0.1, rng, dtype)});
    // Start every keypoint at the image centre in normalised coordinates.
    fc.arrays.push_back({"bias", at::full({4}, 0.5, at::TensorOptions().dtype(dtype))});
    w.layers.push_back(std::move(fc));
  } else {
    Layer head = conv_layer("head.conv", LayerKind::head, 3, in, 1);
    head.arrays[0].value = head.arrays[0].value * 0.1;
    w.layers.push_back(std::move(head));
  }
  w.running = fresh_bn_stats(w);
  validate_weights(w);
  return w;
}

std::tuple<at::Tensor, at::Tensor, at::Tensor> soft_argmax(const at::Tensor& logits, int height,
                                                           int width) {
  const auto B = logits.size(0);
  const auto C = logits.size(1);
  const auto h = logits.size(2);
  const auto w = logits.size(3);
  at::Tensor maps = at::softmax(logits.reshape({B, C, h * w}), -1).reshape({B, C, h, w});
  auto opts = at::TensorOptions().dtype(logits.scalar_type());
  // Pixel centre of heatmap cell u in image coordinates.
  at::Tensor xs = (at::arange(w, opts) + 0.5) * (static_cast<double>(width) / w) - 0.5;
  at::Tensor ys = (at::arange(h, opts) + 0.5) * (static_cast<double>(height) / h) - 0.5;
  at::Tensor x = (maps.sum(2) * xs).sum(-1);
  at::Tensor y = (maps.sum(3) * ys).sum(-1);
  return {x, y, maps};
}

Prediction forward(const ModelConfig& c, const ModelWeights& weights, const at::Tensor& images,
                   BnContext bn) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != c.height ||
      images.size(3) != c.width) {
    throw std::invalid_argument("images must be [B, 3, " + std::to_string(c.height) + ", " +
                                std::to_string(c.width) + "]");
  }
  BnStats* stats = bn.stats;
  const BnStats& frozen = stats != nullptr ? *stats : weights.running;
  if ((bn.mode == BnMode::train_accumulate || bn.mode == BnMode::accumulate_frozen) &&
      stats == nullptr) {
    throw std::invalid_argument("accumulating batchnorm modes need a statistics set to update");
  }

  std::vector<at::Tensor> skips;
  at::Tensor x = images;
  for (std::size_t b = 0; b < c.encoder_widths.size(); ++b) {
    const Layer& conv = weights.layer(enc_name(b, "conv"));
    x = at::conv2d(x, conv.array("weight"), conv.array("bias"), 1, 1);
    const Layer& norm = weights.layer(enc_name(b, "bn"));
    switch (bn.mode) {
      case BnMode::batch_stats:
        x = at::batch_norm(x, norm.array("weight"), norm.array("bias"), {}, {}, true, bn.momentum,
                           bn.eps, false);
        break;
      case BnMode::train_accumulate: {
        BnLayerStats& s = stats->at(norm.name);
        x = at::batch_norm(x, norm.array("weight"), norm.array("bias"), s.mean, s.var, true,
                           bn.momentum, bn.eps, false);
        s.count += 1;
        break;
      }
      case BnMode::accumulate_frozen: {
        BnLayerStats& s = stats->at(norm.name);
        {
          at::NoGradGuard no_grad;
          const at::Tensor xd = x.detach();
          const double m = bn.momentum;
          s.mean.mul_(1.0 - m).add_(xd.mean({0, 2, 3}).to(s.mean.scalar_type()), m);
          s.var.mul_(1.0 - m).add_(xd.var({0, 2, 3}, /*unbiased=*/true).to(s.var.scalar_type()), m);
        }
        s.count += 1;
        // Later folds into the same set must not disturb this graph.
        x = at::batch_norm(x, norm.array("weight"), norm.array("bias"), s.mean.clone(),
                           s.var.clone(), false, bn.momentum, bn.eps, false);
        break;
      }
      case BnMode::eval_frozen: {
        const BnLayerStats& s = frozen.at(norm.name);
        x = at::batch_norm(x, norm.array("weight"), norm.array("bias"), s.mean, s.var, false,
                           bn.momentum, bn.eps, false);
        break;
      }
    }
    x = at::avg_pool2d(at::relu(x), {2, 2});
    skips.push_back(x);
  }
  for (int s = 0; s < c.decoder_stages; ++s) {
    const at::Tensor& skip = skips[skips.size() - 2 - static_cast<std::size_t>(s)];
    x = at::upsample_bilinear2d(x, {skip.size(2), skip.size(3)}, false);
    x = at::cat({x, skip}, 1);
    const Layer& conv = weights.layer("dec" + std::to_string(s) + ".conv");
    x = at::relu(at::conv2d(x, conv.array("weight"), conv.array("bias"), 1, 1));
  }

  Prediction out;
  const Layer& head = weights.layer("head.conv");
  x = at::conv2d(x, head.array("weight"), head.array("bias"));
  if (c.head == HeadKind::direct_regression) {
    const Layer& fc = weights.layer("head.fc");
    at::Tensor features = x.flatten(1);
    // Unit-scale fan-in keeps plain gradient steps on this layer independent
    // of the feature count.
    features = features * (1.0 / std::sqrt(static_cast<double>(features.size(1))));
    at::Tensor norm = at::linear(features, fc.array("weight"), fc.array("bias"));
    auto opts = at::TensorOptions().dtype(norm.scalar_type());
    const at::Tensor scale =
        at::tensor({c.width - 1.0, c.height - 1.0, c.width - 1.0, c.width - 1.0}, opts.dtype(at::kDouble))
            .to(norm.scalar_type());
    out.keypoints = norm * scale;
  } else {
    auto [px, py, maps] = soft_argmax(x, c.height, c.width);
    out.keypoints = at::stack({px.select(1, 0), py.select(1, 0), px.select(1, 1), px.select(1, 2)}, 1);
    out.heatmaps = maps;
  }
  return out;
}

at::Tensor images_to_tensor(const std::vector<taskdata::Sample>& samples, at::ScalarType dtype) {
  if (samples.empty()) throw std::invalid_argument("empty sample list");
  const int H = samples.front().image->height;
  const int W = samples.front().image->width;
  at::Tensor t = at::empty({static_cast<std::int64_t>(samples.size()), H, W, 3}, at::kFloat);
  float* dst = t.data_ptr<float>();
  for (const auto& s : samples) {
    if (s.image->height != H || s.image->width != W) {
      throw std::invalid_argument("images in one batch must share a size");
    }
    std::copy(s.image->pixels.begin(), s.image->pixels.end(), dst);
    dst += s.image->pixels.size();
  }
  return t.permute({0, 3, 1, 2}).contiguous().to(dtype);
}

at::Tensor labels_to_tensor(const std::vector<taskdata::Sample>& samples, at::ScalarType dtype) {
  at::Tensor t = at::empty({static_cast<std::int64_t>(samples.size()), 4}, at::kDouble);
  auto a = t.accessor<double, 2>();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& l = samples[i].label;
    const auto r = static_cast<std::int64_t>(i);
    a[r][0] = l.vanishing_point.x;
    a[r][1] = l.vanishing_point.y;
    a[r][2] = l.left_x;
    a[r][3] = l.right_x;
  }
  return t.to(dtype);
}

taskdata::KeypointLabel label_from_row(const at::Tensor& row) {
  at::Tensor r = row.detach().to(at::kDouble).contiguous();
  const double* p = r.data_ptr<double>();
  return {{p[0], p[1]}, p[2], p[3]};
}

}  // namespace metakey::kpnet
