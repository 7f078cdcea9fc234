#include <cmath>

#include "doctest_torch.hpp"
#include "metakey/kpnet/loss.hpp"
#include "metakey/metacore/adam.hpp"
#include "metakey/metacore/adapt.hpp"
#include "metakey/metacore/outer.hpp"
#include "metakey/metacore/schedules.hpp"
#include "toy_meta.hpp"

using namespace metakey;
using namespace metakey::metacore;

namespace {

MetaConfig episodes(std::int64_t t) {
  MetaConfig c;
  c.episodes = t;
  return c;
}

/// L(theta) = sum(theta^2), independent of the batch.
class SquareLearner final : public Learner {
 public:
  at::Tensor loss(const kpnet::ModelWeights& w, const Batch&, kpnet::BnContext) const override {
    const at::Tensor& t = w.layer("head.lin").array("w");
    return (t * t).sum();
  }
};

class NanLearner final : public Learner {
 public:
  at::Tensor loss(const kpnet::ModelWeights& w, const Batch&, kpnet::BnContext) const override {
    return w.layer("head.lin").array("w").sum() * std::nan("");
  }
};

kpnet::ModelConfig tiny_model() {
  kpnet::ModelConfig c;
  c.height = 8;
  c.width = 8;
  c.encoder_widths = {3, 4};
  c.decoder_stages = 1;
  c.decoder_width = 4;
  c.head_channels = 2;
  return c;
}

Batch random_batch(const kpnet::ModelConfig& c, std::int64_t n, std::uint64_t seed) {
  at::manual_seed(seed);
  return {at::rand({n, 3, c.height, c.width}), at::rand({n, 4}) * 7.0};
}

}  // namespace

TEST_CASE("cosine outer rate endpoints and midpoint") {
  const MetaConfig c = episodes(2001);
  CHECK(std::abs(cosine_outer_rate(0, c) - 0.001) <= 1e-12);
  CHECK(std::abs(cosine_outer_rate(2000, c) - 0.00001) <= 1e-12);
  CHECK(std::abs(cosine_outer_rate(1000, c) - 5.05e-4) <= 1e-12);
  CHECK_THROWS_AS(cosine_outer_rate(2001, c), std::out_of_range);
  CHECK_THROWS_AS(cosine_outer_rate(-1, c), std::out_of_range);
}

TEST_CASE("multi-step loss weights") {
  const MetaConfig c = episodes(2000);
  const auto w0 = msl_weights(0, c);
  for (double w : w0) CHECK(std::abs(w - 1.0 / 3.0) <= 1e-12);
  // 990 / (0.99 * 2000) = 0.5 of the way to (0, 0, 1).
  const auto mid = msl_weights(990, c);
  CHECK(std::abs(mid[0] - 1.0 / 6.0) <= 1e-12);
  CHECK(std::abs(mid[1] - 1.0 / 6.0) <= 1e-12);
  CHECK(std::abs(mid[2] - 2.0 / 3.0) <= 1e-12);
  for (std::int64_t e = 0; e < c.episodes; ++e) {
    const auto w = msl_weights(e, c);
    CHECK(std::abs(w[0] + w[1] + w[2] - 1.0) <= 1e-12);
    if (e >= 1980) CHECK(w == std::vector<double>{0.0, 0.0, 1.0});
  }
}

TEST_CASE("derivative order flips at the rounded-up boundary") {
  for (std::int64_t t : {1, 7, 10, 333, 2000, 2001, 20000}) {
    const MetaConfig c = episodes(t);
    const auto flip = static_cast<std::int64_t>(std::ceil(0.3 * static_cast<double>(t)));
    CAPTURE(t);
    if (flip > 0) CHECK(derivative_order(flip - 1, c) == DerivativeOrder::first);
    if (flip < t) CHECK(derivative_order(flip, c) == DerivativeOrder::second);
  }
  MetaConfig never = episodes(100);
  never.first_order_fraction = 0.0;
  for (std::int64_t e = 0; e < 100; ++e) CHECK(derivative_order(e, never) == DerivativeOrder::second);
}

TEST_CASE("one inner step on a square loss") {
  SquareLearner learner;
  MetaConfig cfg = episodes(10);
  cfg.inner_steps = 1;
  cfg.inner_rate_init = 0.1;
  auto state = make_meta_state(kpnet::ModelWeights{test::toy_weights({1.0, 0.0})}, cfg);
  const auto traj = inner_adapt(learner, state, Batch{}, {});
  REQUIRE(traj.size() == 2);
  CHECK(traj.final_weights().layer("head.lin").array("w")[0].item<double>() ==
        doctest::Approx(0.8).epsilon(1e-15));

  cfg.inner_steps = 0;
  auto none = make_meta_state(kpnet::ModelWeights{test::toy_weights({1.0, 0.0})}, cfg);
  const auto id = inner_adapt(learner, none, Batch{}, {});
  CHECK(id.size() == 1);
  CHECK(id.final_weights().identical(none.weights));
}

TEST_CASE("second-order meta-gradient matches finite differences of the unrolled loss") {
  test::LinearToy learner;
  const auto tasks = test::toy_tasks(3, 5);
  for (std::size_t n = 1; n <= 3; ++n) {
    CAPTURE(n);
    std::vector<double> rates;
    for (std::size_t j = 0; j < n; ++j) rates.push_back(0.05 + 0.03 * static_cast<double>(j));
    MetaConfig cfg = episodes(100);
    cfg.first_order_fraction = 0.0;
    const test::Vec2 theta{0.7, -0.4};
    auto state = test::toy_state(theta, rates, cfg);
    const auto g = meta_gradient(learner, state, test::toy_batches(tasks), 0);
    REQUIRE(g.order == DerivativeOrder::second);
    const auto fd = test::toy_fd_gradient(theta, rates, g.step_weights, tasks);
    CHECK(g.meta_loss == doctest::Approx(test::toy_objective(theta, rates, g.step_weights, tasks))
                             .epsilon(1e-12));
    for (int d = 0; d < 2; ++d) {
      const double an = g.weights[0][d].item<double>();
      CHECK(std::abs(an - fd.theta[d]) / std::max(std::abs(fd.theta[d]), 1e-8) < 1e-4);
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double an = g.rates[0][static_cast<std::int64_t>(j)].item<double>();
      CHECK(std::abs(an - fd.rates[j]) / std::max(std::abs(fd.rates[j]), 1e-8) < 1e-4);
    }
  }
}

TEST_CASE("first-order meta-gradient treats support gradients as constants") {
  test::LinearToy learner;
  const auto tasks = test::toy_tasks(2, 9);
  for (std::size_t n = 1; n <= 3; ++n) {
    std::vector<double> rates;
    for (std::size_t j = 0; j < n; ++j) rates.push_back(0.1 - 0.02 * static_cast<double>(j));
    MetaConfig cfg = episodes(100);
    cfg.first_order_fraction = 1.0;
    const test::Vec2 theta{-0.3, 1.1};
    auto state = test::toy_state(theta, rates, cfg);
    const auto g = meta_gradient(learner, state, test::toy_batches(tasks), 0);
    REQUIRE(g.order == DerivativeOrder::first);
    const auto oracle = test::toy_first_order_gradient(theta, rates, g.step_weights, tasks);
    for (int d = 0; d < 2; ++d) CHECK(std::abs(g.weights[0][d].item<double>() - oracle.theta[d]) < 1e-10);
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(std::abs(g.rates[0][static_cast<std::int64_t>(j)].item<double>() - oracle.rates[j]) < 1e-10);
    }
  }
}

TEST_CASE("final-step-only weights reduce the objective to the last query loss") {
  test::LinearToy learner;
  const auto tasks = test::toy_tasks(2, 3);
  const std::vector<double> rates{0.1, 0.1, 0.1};
  MetaConfig cfg = episodes(100);
  auto state = test::toy_state({0.2, 0.5}, rates, cfg);
  const auto g = meta_gradient(learner, state, test::toy_batches(tasks), 99);
  REQUIRE(g.step_weights == std::vector<double>{0.0, 0.0, 1.0});
  double last = 0.0;
  for (const auto& t : tasks) {
    last += test::sq_loss(test::toy_trajectory({0.2, 0.5}, rates, t).back(), t.qx, t.qy);
  }
  CHECK(g.meta_loss == doctest::Approx(last / 2.0).epsilon(1e-12));
}

TEST_CASE("outer step applies Adam at the scheduled rate and stops at T") {
  test::LinearToy learner;
  const auto tasks = test::toy_tasks(2, 4);
  MetaConfig cfg = episodes(2);
  auto state = test::toy_state({0.2, 0.5}, {0.1}, cfg);
  const auto before = state.clone();
  const auto g = meta_gradient(learner, state, test::toy_batches(tasks), 0);
  outer_step(learner, state, test::toy_batches(tasks));
  // First Adam step moves each coordinate by lr * g / (|g| + eps).
  for (int d = 0; d < 2; ++d) {
    const double gd = g.weights[0][d].item<double>();
    const double expected = before.weights.layer("head.lin").array("w")[d].item<double>() -
                            0.001 * gd / (std::abs(gd) + 1e-8);
    CHECK(state.weights.layer("head.lin").array("w")[d].item<double>() ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(state.episode == 1);
  outer_step(learner, state, test::toy_batches(tasks));
  CHECK_THROWS_AS(outer_step(learner, state, test::toy_batches(tasks)), std::out_of_range);
}

TEST_CASE("vanilla MAML keeps its rates fixed") {
  test::LinearToy learner;
  MetaConfig cfg = episodes(5);
  cfg.mode = Mode::maml;
  auto state = test::toy_state({0.2, 0.5}, {0.1, 0.2}, cfg);
  CHECK(state.bn.sets.size() == 1);
  const at::Tensor rates = state.rates.rates.clone();
  outer_step(learner, state, test::toy_batches(test::toy_tasks(2, 1)));
  CHECK(at::equal(rates, state.rates.rates));
}

TEST_CASE("adam bias correction on the first step") {
  AdamState opt;
  std::vector<at::Tensor> p{at::tensor({1.0, -2.0}, at::kDouble)};
  adam_step(p, {at::tensor({0.5, -4.0}, at::kDouble)}, opt, 0.1);
  CHECK(opt.steps == 1);
  CHECK(p[0][0].item<double>() == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p[0][1].item<double>() == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("per-layer per-step rates start at 0.4") {
  const auto w = kpnet::init_model(kpnet::ModelConfig{}, 1);
  const auto state = make_meta_state(w, MetaConfig{});
  CHECK(state.rates.layers == w.layer_names());
  CHECK(state.rates.rates.sizes().vec() ==
        std::vector<std::int64_t>{static_cast<std::int64_t>(w.layers.size()), 3});
  CHECK(at::equal(state.rates.rates, at::full({static_cast<std::int64_t>(w.layers.size()), 3}, 0.4)));
  CHECK(state.bn.sets.size() == 3);
}

TEST_CASE("each inner step feeds its own statistics set") {
  const auto mc = tiny_model();
  KeypointLearner learner(mc);
  MetaConfig cfg = episodes(10);
  auto state = make_meta_state(kpnet::init_model(mc, 3), cfg);
  std::vector<TaskBatch> batch;
  for (int e = 0; e < 4; ++e) batch.push_back({random_batch(mc, 5, 10 + e), random_batch(mc, 10, 20 + e)});
  outer_step(learner, state, batch);
  for (const auto& set : state.bn.sets) {
    for (const auto& s : set.layers) CHECK(s.count == 4);
  }
  // No two sets received the same folds.
  CHECK_FALSE(state.bn.sets[0].identical(state.bn.sets[1]));
  CHECK_FALSE(state.bn.sets[1].identical(state.bn.sets[2]));

  // Adapting on one set leaves the others bitwise intact.
  const auto snapshot = state.bn.clone();
  MetaConfig one = cfg;
  one.inner_steps = 1;
  PerStepBnStats& sets = state.bn;
  inner_adapt(learner, state.weights, state.rates.rates, state.rates.layers, sets, one,
              random_batch(mc, 5, 40), adapt_mask(state.weights, Mode::maml_pp),
              InnerOptions{false, true, BnPhase::accumulate, 0});
  CHECK_FALSE(sets.sets[0].identical(snapshot.sets[0]));
  CHECK(sets.sets[1].identical(snapshot.sets[1]));
  CHECK(sets.sets[2].identical(snapshot.sets[2]));
}

TEST_CASE("ANIL adapts only the head") {
  const auto mc = tiny_model();
  KeypointLearner learner(mc);
  MetaConfig cfg = episodes(10);
  cfg.mode = Mode::anil_pp;
  auto state = make_meta_state(kpnet::init_model(mc, 3), cfg);
  CHECK(adapt_mask(state.weights, Mode::anil_pp) == std::set<std::string>{"head.conv", "head.fc"});
  CHECK(adapt_mask(state.weights, Mode::maml_pp).size() == state.weights.layers.size());
  const auto adapted = test_time_adapt(learner, state, random_batch(mc, 5, 1));
  for (std::size_t i = 0; i < adapted.layers.size(); ++i) {
    const auto& a = adapted.layers[i];
    const auto& b = state.weights.layers[i];
    bool same = true;
    for (std::size_t j = 0; j < a.arrays.size(); ++j) same = same && at::equal(a.arrays[j].value, b.arrays[j].value);
    CAPTURE(a.name);
    CHECK(same == (a.kind != kpnet::LayerKind::head));
  }
}

TEST_CASE("test-time adaptation is pure and deterministic") {
  const auto mc = tiny_model();
  KeypointLearner learner(mc);
  MetaConfig cfg = episodes(10);
  auto state = make_meta_state(kpnet::init_model(mc, 3), cfg);
  const auto before = state.clone();
  const Batch support = random_batch(mc, 5, 2);
  const auto a = test_time_adapt(learner, state, support);
  const auto b = test_time_adapt(learner, state, support);
  CHECK(a.identical(b));
  CHECK(state.identical(before));
  CHECK(a.running.identical(state.bn.sets[2]));

  std::vector<std::string> warnings;
  test_time_adapt(learner, state, random_batch(mc, 3, 2), [&](const std::string& w) { warnings.push_back(w); });
  CHECK(warnings.size() == 1);

  cfg.inner_steps = 0;
  const auto zero = make_meta_state(kpnet::init_model(mc, 3), cfg);
  CHECK(test_time_adapt(learner, zero, support).identical(zero.weights));
}

TEST_CASE("non-finite inner losses name the episode and step") {
  NanLearner learner;
  MetaConfig cfg = episodes(10);
  auto state = test::toy_state({1.0, 1.0}, {0.1, 0.1}, cfg);
  InnerOptions opt;
  opt.episode = 7;
  try {
    inner_adapt(learner, state, Batch{}, opt);
    FAIL("expected a non-finite loss error");
  } catch (const kpnet::NonFiniteLoss& e) {
    const std::string msg = e.what();
    CHECK(msg.find("episode 7") != std::string::npos);
    CHECK(msg.find("inner step 0") != std::string::npos);
  }
}

TEST_CASE("state construction requires a head group") {
  kpnet::ModelWeights w = test::toy_weights({0.0, 0.0});
  w.layers[0].kind = kpnet::LayerKind::conv;
  CHECK_THROWS_AS(make_meta_state(w, MetaConfig{}), std::invalid_argument);
  MetaConfig bad;
  bad.msl_fraction = 1.5;
  CHECK_THROWS_AS(make_meta_state(test::toy_weights({0.0, 0.0}), bad), std::invalid_argument);
}
