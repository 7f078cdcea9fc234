#include <algorithm>
#include <numeric>

#include "doctest_torch.hpp"
#include "metakey/baseline/baseline.hpp"
#include "metakey/metacore/adapt.hpp"
#include "metakey/taskdata/synth.hpp"
#include "toy_meta.hpp"

using namespace metakey;
using namespace metakey::baseline;

namespace {

class SquareLearner final : public metacore::Learner {
 public:
  at::Tensor loss(const kpnet::ModelWeights& w, const metacore::Batch&,
                  kpnet::BnContext) const override {
    const at::Tensor& t = w.layer("head.lin").array("w");
    return (t * t).sum();
  }
};

kpnet::ModelConfig tiny_model() {
  kpnet::ModelConfig c;
  c.height = 16;
  c.width = 16;
  c.encoder_widths = {3, 4};
  c.decoder_stages = 1;
  c.decoder_width = 4;
  c.head_channels = 2;
  return c;
}

taskdata::Split tiny_split(const std::string& name, std::uint64_t seed, std::size_t days) {
  auto p = taskdata::synth_preset("early");
  p.height = p.width = 16;
  std::vector<taskdata::Task> tasks;
  for (std::size_t d = 0; d < days; ++d) {
    tasks.push_back(taskdata::synth_generate(p, 10, name + std::to_string(d), seed + d, seed + 100 + d));
  }
  return taskdata::Split(name, tasks);
}

metacore::Batch random_support(const kpnet::ModelConfig& c, std::uint64_t seed) {
  at::manual_seed(seed);
  return {at::rand({5, 3, c.height, c.width}), at::rand({5, 4}) * 15.0};
}

}  // namespace

TEST_CASE("defaults follow the published conventional schedule") {
  const BaselineConfig c;
  CHECK(c.epochs == 50);
  CHECK(c.lr == 1e-4);
  CHECK(c.finetune_steps == 3);
}

TEST_CASE("finetuning examples") {
  SquareLearner learner;
  const auto w = test::toy_weights({1.0, 0.0});
  const auto unchanged = finetune_baseline(learner, w, {}, 0.0, 3);
  CHECK(unchanged.weights.identical(w));
  const auto one = finetune_baseline(learner, w, {}, 0.1, 1);
  CHECK(one.steps_taken == 1);
  CHECK_FALSE(one.diverged);
  CHECK(one.weights.layer("head.lin").array("w")[0].item<double>() ==
        doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("a diverging finetune keeps the last finite iterate") {
  SquareLearner learner;
  // theta <- theta * (1 - 2 lr): about -1e150 after one step (loss 1e300),
  // 1e300 after two (loss overflows).
  const auto r = finetune_baseline(learner, test::toy_weights({1.0, 0.0}), {}, 5e149, 3);
  CHECK(r.diverged);
  CHECK(r.steps_taken == 1);
  CHECK(std::isfinite(r.weights.layer("head.lin").array("w")[0].item<double>()));
}

TEST_CASE("finetuning equals inner adaptation with uniform rates and every layer") {
  const auto mc = tiny_model();
  metacore::KeypointLearner learner(mc);
  auto w = kpnet::init_model(mc, 5);
  at::manual_seed(1);
  for (auto& s : w.running.layers) {
    s.mean = at::rand_like(s.mean) * 0.1;
    s.var = at::rand_like(s.var) + 0.5;
  }
  const auto support = random_support(mc, 2);
  const double lr = 0.05;
  metacore::MetaConfig cfg;
  cfg.inner_steps = 3;
  cfg.inner_rate_init = lr;
  auto state = metacore::make_meta_state(w, cfg);
  for (auto& set : state.bn.sets) set = w.running.clone();
  const auto traj = metacore::inner_adapt(learner, state, support, {});
  const auto ft = finetune_baseline(learner, w, support, lr, 3);
  REQUIRE(ft.steps_taken == 3);
  auto adapted = traj.final_weights();
  adapted.running = w.running;
  CHECK(ft.weights.identical(adapted));
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(50, 3, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(50);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
  CHECK(a == epoch_order(50, 3, 0));
  CHECK(a != epoch_order(50, 3, 1));
  CHECK(a != epoch_order(50, 4, 0));
}

TEST_CASE("conventional training emits the initial state and is reproducible") {
  const auto mc = tiny_model();
  metacore::KeypointLearner learner(mc);
  const auto train = tiny_split("t", 1, 2);
  const auto val = tiny_split("v", 50, 1);
  BaselineConfig cfg;
  cfg.epochs = 0;
  BaselineState init{kpnet::init_model(mc, 1), {}, 0};
  const auto none = train_conventional(learner, init.clone(), train, val, cfg, 7);
  REQUIRE(none.size() == 1);
  CHECK(none[0].epoch == 0);
  CHECK(none[0].state.weights.identical(init.weights));

  cfg.epochs = 3;
  cfg.lr = 1e-3;
  cfg.batch = 4;
  const auto a = train_conventional(learner, init.clone(), train, val, cfg, 7, 2);
  const auto b = train_conventional(learner, init.clone(), train, val, cfg, 7, 2);
  REQUIRE(a.size() == 3);
  CHECK(a[1].epoch == 2);
  CHECK(a[2].epoch == 3);
  CHECK(a.back().val_loss == b.back().val_loss);
  CHECK(a.back().state.identical(b.back().state));
  CHECK(a.back().state.optimizer.steps == 3 * 5);  // 20 images in batches of 4
  for (const auto& s : a.back().state.weights.running.layers) CHECK(s.count == 15);
  CHECK(plain_val_loss(learner, a.back().state.weights, val) == a.back().val_loss);
}

TEST_CASE("config validation") {
  BaselineConfig c;
  c.batch = 0;
  CHECK_THROWS(c.validate());
  c = BaselineConfig{};
  c.lr = -1.0;
  CHECK_THROWS(c.validate());
}
