#include <cmath>

#include "doctest_torch.hpp"
#include "metakey/kpnet/loss.hpp"
#include "metakey/kpnet/model.hpp"

using namespace metakey;
using namespace metakey::kpnet;

namespace {

ModelConfig tiny_config(HeadKind head) {
  ModelConfig c;
  c.height = 8;
  c.width = 8;
  c.encoder_widths = {2};
  c.decoder_stages = 0;
  c.head = head;
  c.head_channels = 1;
  return c;
}

at::Tensor random_images(std::int64_t b, const ModelConfig& c, std::uint64_t seed,
                         at::ScalarType dtype = at::kFloat) {
  at::manual_seed(seed);
  return at::rand({b, 3, c.height, c.width}, at::TensorOptions().dtype(dtype));
}

}  // namespace

TEST_CASE("initialisation is seeded and batchnorm starts as the identity") {
  const ModelConfig c;
  const auto a = init_model(c, 3);
  const auto b = init_model(c, 3);
  CHECK(a.identical(b));
  CHECK_FALSE(a.identical(init_model(c, 4)));
  for (const auto& name : a.batchnorm_layers()) {
    CHECK(at::equal(a.layer(name).array("weight"), at::ones({a.layer(name).array("weight").size(0)})));
    CHECK(at::equal(a.layer(name).array("bias"), at::zeros({a.layer(name).array("bias").size(0)})));
  }
  CHECK(a.batchnorm_layers().size() == 4);
  CHECK(a.head_layers() == std::vector<std::string>{"head.conv", "head.fc"});
}

TEST_CASE("configs without batchnorm are rejected") {
  ModelConfig c;
  c.batchnorm = false;
  CHECK_THROWS_AS(init_model(c, 1), std::invalid_argument);
  c = ModelConfig{};
  c.encoder_widths.clear();
  CHECK_THROWS_AS(init_model(c, 1), std::invalid_argument);
}

TEST_CASE("parameter count of the default model") {
  // Encoder 3->16->32->64->64 (3x3 conv + bias, batchnorm scale + shift),
  // decoder 64+64->32 then 32+32->32, 1x1 conv 32->4, then a dense layer
  // from 4x32x32 features to 4 outputs.
  const std::int64_t enc = (16 * 3 * 9 + 16 + 32) + (32 * 16 * 9 + 32 + 64) +
                           (64 * 32 * 9 + 64 + 128) + (64 * 64 * 9 + 64 + 128);
  const std::int64_t dec = (32 * 128 * 9 + 32) + (32 * 64 * 9 + 32);
  const std::int64_t head = (4 * 32 + 4) + (4 * 4 * 32 * 32 + 4);
  const ModelConfig c;
  CHECK(c.feature_height() == 32);
  CHECK(init_model(c, 0).parameter_count() == enc + dec + head);
  CHECK(expected_parameter_count(c) == enc + dec + head);
  CHECK(init_model(c, 9).parameter_count() == enc + dec + head);
}

TEST_CASE("zero-weight direct head predicts zeros") {
  const ModelConfig c = tiny_config(HeadKind::direct_regression);
  auto w = init_model(c, 1);
  for (auto& l : w.layers) {
    if (l.kind != LayerKind::head) continue;
    for (auto& a : l.arrays) a.value = at::zeros_like(a.value);
  }
  const auto p = forward(c, w, random_images(5, c, 2), {});
  CHECK(at::equal(p.keypoints, at::zeros({5, 4})));
}

TEST_CASE("frozen forward is pure") {
  const ModelConfig c = tiny_config(HeadKind::direct_regression);
  const auto w = init_model(c, 1);
  const BnStats before = w.running.clone();
  const auto x = random_images(4, c, 3);
  const auto a = forward(c, w, x, {}).keypoints;
  const auto b = forward(c, w, x, {}).keypoints;
  CHECK(at::equal(a, b));
  CHECK(w.running.identical(before));
}

TEST_CASE("accumulating forward touches only its own statistics set") {
  const ModelConfig c = tiny_config(HeadKind::direct_regression);
  const auto w = init_model(c, 1);
  std::vector<BnStats> sets{fresh_bn_stats(w), fresh_bn_stats(w), fresh_bn_stats(w)};
  const auto untouched0 = sets[0].clone();
  const auto untouched2 = sets[2].clone();
  for (BnMode mode : {BnMode::train_accumulate, BnMode::accumulate_frozen}) {
    BnContext ctx;
    ctx.mode = mode;
    ctx.stats = &sets[1];
    const auto before = sets[1].clone();
    forward(c, w, random_images(4, c, 5), ctx);
    CHECK_FALSE(sets[1].identical(before));
  }
  CHECK(sets[0].identical(untouched0));
  CHECK(sets[2].identical(untouched2));
  CHECK(sets[1].layers[0].count == 2);
  BnContext missing;
  missing.mode = BnMode::train_accumulate;
  CHECK_THROWS_AS(forward(c, w, random_images(2, c, 5), missing), std::invalid_argument);
}

TEST_CASE("accumulate_frozen normalises with the statistics it just updated") {
  const ModelConfig c = tiny_config(HeadKind::direct_regression);
  const auto w = init_model(c, 1);
  const auto x = random_images(4, c, 6);
  BnStats s = fresh_bn_stats(w);
  BnContext acc;
  acc.mode = BnMode::accumulate_frozen;
  acc.stats = &s;
  const auto a = forward(c, w, x, acc).keypoints;
  BnContext frozen;
  frozen.stats = &s;
  CHECK(at::allclose(a, forward(c, w, x, frozen).keypoints, 1e-6, 1e-6));
}

TEST_CASE("soft-argmax of a uniform map is the image centroid") {
  const auto [x, y, maps] = soft_argmax(at::zeros({2, 3, 4, 5}, at::kDouble), 16, 20);
  CHECK(at::allclose(x, at::full({2, 3}, 9.5, at::kDouble)));
  CHECK(at::allclose(y, at::full({2, 3}, 7.5, at::kDouble)));
  CHECK(at::allclose(maps.sum({2, 3}), at::ones({2, 3}, at::kDouble)));
}

TEST_CASE("soft-argmax stays inside the image for any logits") {
  at::manual_seed(7);
  at::Tensor logits = at::randn({8, 3, 6, 6}, at::kDouble) * 50.0;
  logits.index_put_({0, 0, 0, 0}, 1e4);
  logits.index_put_({1, 1, 5, 5}, 1e4);
  const auto [x, y, maps] = soft_argmax(logits, 24, 30);
  CHECK(x.min().item<double>() >= 0.0);
  CHECK(x.max().item<double>() <= 29.0);
  CHECK(y.min().item<double>() >= 0.0);
  CHECK(y.max().item<double>() <= 23.0);
  CHECK(at::allclose(maps.sum({2, 3}), at::ones({8, 3}, at::kDouble)));

  const ModelConfig c = tiny_config(HeadKind::heatmap_soft_argmax);
  const auto p = forward(c, init_model(c, 2), random_images(3, c, 8), {});
  CHECK(p.heatmaps.sizes().vec() == std::vector<std::int64_t>{3, 3, 4, 4});
  CHECK(p.keypoints.min().item<double>() >= 0.0);
  CHECK(p.keypoints.max().item<double>() <= 7.0);
}

TEST_CASE("keypoint loss examples") {
  const taskdata::KeypointLabel label{{40.0, 10.0}, 5.0, 90.0};
  CHECK(keypoint_loss(label, label) == 0.0);
  const taskdata::KeypointLabel pred{{43.0, 6.0}, 7.0, 85.0};
  CHECK(keypoint_loss(pred, label) == 14.0);
  CHECK(keypoint_loss(label, pred) == keypoint_loss(pred, label));

  const at::Tensor p = at::tensor({43.0, 6.0, 7.0, 85.0}, at::kDouble).reshape({1, 4});
  const at::Tensor l = at::tensor({40.0, 10.0, 5.0, 90.0}, at::kDouble).reshape({1, 4});
  CHECK(keypoint_loss(p, l).item<double>() == 14.0);
  CHECK(keypoint_loss(at::cat({p, p}), at::cat({l, l})).item<double>() == 14.0);
  CHECK(keypoint_loss(l, p).item<double>() == 14.0);
  const at::Tensor two = at::cat({p, l});
  CHECK(at::equal(keypoint_loss_per_sample(two, at::cat({l, l})),
                  at::tensor({14.0, 0.0}, at::kDouble)));
  CHECK_THROWS_AS(
      keypoint_loss(at::full({1, 4}, std::nan(""), at::kDouble), l), NonFiniteLoss);
  CHECK_THROWS_AS(require_finite(at::scalar_tensor(INFINITY), "ctx"), NonFiniteLoss);
}

TEST_CASE("normalised objective scales each axis") {
  const at::Tensor p = at::tensor({43.0, 6.0, 7.0, 85.0}, at::kDouble).reshape({1, 4});
  const at::Tensor l = at::tensor({40.0, 10.0, 5.0, 90.0}, at::kDouble).reshape({1, 4});
  // x residuals over W - 1 = 99, y residual over H - 1 = 49.
  const double expected = (3.0 / 99.0 + 4.0 / 49.0 + 2.0 / 99.0 + 5.0 / 99.0) / 4.0;
  CHECK(normalized_keypoint_loss(p, l, 50, 100).item<double>() == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("gradients match central finite differences") {
  for (HeadKind head : {HeadKind::direct_regression, HeadKind::heatmap_soft_argmax}) {
    CAPTURE(to_string(head));
    const ModelConfig c = tiny_config(head);
    auto w = init_model(c, 11, at::kDouble);
    REQUIRE(w.parameter_count() <= 200);
    at::manual_seed(12);
    for (auto& s : w.running.layers) {
      s.mean = at::rand_like(s.mean) * 0.2;
      s.var = at::rand_like(s.var) + 0.5;
    }
    const at::Tensor x = random_images(3, c, 13, at::kDouble);
    // Far from the predictions so no L1 residual sits near zero.
    const at::Tensor target =
        at::tensor({30.0, -20.0, -25.0, 40.0}, at::kDouble).repeat({3, 1}) + at::rand({3, 4}, at::kDouble);

    for (BnMode mode : {BnMode::eval_frozen, BnMode::batch_stats}) {
      BnContext ctx;
      ctx.mode = mode;
      auto objective = [&](const ModelWeights& m) {
        return keypoint_loss(forward(c, m, x, ctx).keypoints, target);
      };
      std::vector<at::Tensor> leaves;
      for (auto& l : w.layers) {
        for (auto& a : l.arrays) {
          a.value = a.value.detach().requires_grad_(true);
          leaves.push_back(a.value);
        }
      }
      const auto grads = torch::autograd::grad({objective(w)}, leaves, {}, false, false, true);

      ModelWeights probe = w.clone();
      const double h = 1e-5;
      std::size_t g = 0;
      int checked = 0;
      for (auto& l : probe.layers) {
        for (auto& a : l.arrays) {
          const at::Tensor analytic =
              grads[g].defined() ? grads[g] : at::zeros_like(a.value);
          ++g;
          auto flat = a.value.view({-1});
          for (std::int64_t i = 0; i < flat.numel(); ++i) {
            const double orig = flat[i].item<double>();
            flat[i] = orig + h;
            const double up = objective(probe).item<double>();
            flat[i] = orig - h;
            const double down = objective(probe).item<double>();
            flat[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double an = analytic.view({-1})[i].item<double>();
            const double scale = std::max({std::abs(fd), std::abs(an), 1e-3});
            CHECK(std::abs(fd - an) / scale < 1e-5);
            ++checked;
          }
        }
      }
      CHECK(checked == w.parameter_count());
    }
  }
}
