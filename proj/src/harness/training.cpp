#include "metakey/harness/training.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "metakey/common/seed.hpp"
#include "metakey/metacore/adapt.hpp"
#include "metakey/metacore/outer.hpp"
#include "metakey/taskdata/sampler.hpp"

namespace metakey::harness {

bool apply_determinism_from_env() {
  const char* v = std::getenv("METAKEY_DETERMINISTIC");
  if (v == nullptr || std::strcmp(v, "1") != 0) return false;
  at::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
  return true;
}

std::uint64_t init_seed(std::uint64_t seed) { return mix_seed({seed, 0x1417ULL}); }

std::filesystem::path series_dir(const ExperimentConfig& config) {
  return std::filesystem::path(config.output_dir) / std::string(to_string(config.mode));
}

std::filesystem::path checkpoint_path(const ExperimentConfig& config, std::int64_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt-%08lld.mkc", static_cast<long long>(index));
  return series_dir(config) / name;
}

std::vector<SeriesEntry> list_series(const std::filesystem::path& dir) {
  std::vector<SeriesEntry> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (!name.starts_with("ckpt-") || e.path().extension() != ".mkc") continue;
    const Checkpoint c = load_checkpoint(e.path());
    out.push_back({e.path(), c.index, c.val_loss, c.val_seasons});
  }
  std::sort(out.begin(), out.end(),
            [](const SeriesEntry& a, const SeriesEntry& b) { return a.index < b.index; });
  return out;
}

std::size_t select_checkpoint(const std::vector<SeriesEntry>& series,
                              const std::set<taskdata::Season>& train_domain) {
  if (series.empty()) throw std::invalid_argument("cannot select from an empty checkpoint series");
  std::vector<std::string> domain;
  for (auto s : train_domain) domain.emplace_back(taskdata::to_string(s));
  std::size_t best = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<std::string> seasons = series[i].val_seasons;
    std::sort(seasons.begin(), seasons.end());
    std::vector<std::string> expected = domain;
    std::sort(expected.begin(), expected.end());
    if (seasons != expected) {
      throw std::invalid_argument("checkpoint " + series[i].path.string() +
                                  " was validated outside the training domain");
    }
    if (series[i].val_loss < series[best].val_loss) best = i;
  }
  return best;
}

namespace {

std::vector<std::string> season_names(const taskdata::Split& split) {
  std::vector<std::string> out;
  for (auto s : split.seasons()) out.emplace_back(taskdata::to_string(s));
  return out;
}

void require_train_domain_val(const ExperimentData& data) {
  const auto train = data.train.seasons();
  const auto val = data.val.seasons();
  if (std::set(train.begin(), train.end()) != std::set(val.begin(), val.end())) {
    throw ConfigError("the validation split must cover exactly the training seasons");
  }
}

void log(const TrainOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

Checkpoint base_checkpoint(const ExperimentConfig& config, std::int64_t index, double val_loss,
                           const taskdata::Split& val) {
  Checkpoint c;
  c.kind = is_meta(config.mode) ? CheckpointKind::meta : CheckpointKind::baseline;
  c.mode = std::string(to_string(config.mode));
  c.index = index;
  c.val_loss = val_loss;
  c.val_seasons = season_names(val);
  c.fingerprint = config.fingerprint();
  c.model = config.model;
  c.baseline_config = config.baseline;
  return c;
}

/// Newest checkpoint to resume from, or nothing for a fresh start.
std::optional<Checkpoint> resume_point(const ExperimentConfig& config, const TrainOptions& options) {
  const auto series = list_series(series_dir(config));
  if (series.empty()) return std::nullopt;
  if (!options.resume) {
    throw ConfigError("output directory " + series_dir(config).string() +
                      " already holds checkpoints; resume or choose another output");
  }
  Checkpoint c = load_checkpoint(series.back().path);
  if (c.fingerprint != config.fingerprint()) {
    throw ConfigError("cannot resume: checkpoint fingerprint " + c.fingerprint +
                      " does not match the config fingerprint " + config.fingerprint());
  }
  return c;
}

std::vector<SeriesEntry> train_meta(const ExperimentConfig& config, const ExperimentData& data,
                                    const TrainOptions& options) {
  const metacore::KeypointLearner learner(config.model);
  const std::int64_t interval = config.effective_interval();
  const std::int64_t k = config.meta.k;
  metacore::MetaState state;
  if (auto c = resume_point(config, options)) {
    state = std::move(*c->meta);
    log(options, "resuming at episode " + std::to_string(state.episode));
  } else {
    state = metacore::make_meta_state(kpnet::init_model(config.model, init_seed(config.seed)),
                                      config.meta);
  }
  taskdata::EpisodeShape shape;
  shape.k = static_cast<std::size_t>(config.meta.k);
  shape.q = static_cast<std::size_t>(config.meta.q);
  shape.meta_batch = static_cast<std::size_t>(config.meta.meta_batch);
  while (state.episode < config.meta.episodes) {
    if (options.stop_after && state.episode >= *options.stop_after) break;
    const std::int64_t episode = state.episode;
    Rng rng = make_rng({config.seed, 0xE915ULL, static_cast<std::uint64_t>(episode)});
    const auto batch = metacore::make_task_batches(taskdata::sample_episode(data.train, shape, rng));
    const double meta_loss = metacore::outer_step(learner, state, batch);
    if (state.episode % interval == 0 || state.episode == config.meta.episodes) {
      const double val = adapted_val_loss(learner, state, data.val, k, config.val_seed);
      Checkpoint c = base_checkpoint(config, state.episode, val, data.val);
      c.meta = state;
      save_checkpoint(c, checkpoint_path(config, state.episode));
      char msg[160];
      std::snprintf(msg, sizeof msg, "episode %lld  meta-loss %.5f  val %.4f",
                    static_cast<long long>(state.episode), meta_loss, val);
      log(options, msg);
    }
  }
  return list_series(series_dir(config));
}

std::vector<SeriesEntry> train_baseline(const ExperimentConfig& config, const ExperimentData& data,
                                        const TrainOptions& options) {
  const metacore::KeypointLearner learner(config.model);
  const std::int64_t interval = config.effective_interval();
  baseline::BaselineState state;
  auto save = [&] {
    const double val = baseline::plain_val_loss(learner, state.weights, data.val);
    Checkpoint c = base_checkpoint(config, state.epoch, val, data.val);
    c.baseline = state;
    save_checkpoint(c, checkpoint_path(config, state.epoch));
    char msg[128];
    std::snprintf(msg, sizeof msg, "epoch %lld  val %.4f", static_cast<long long>(state.epoch), val);
    log(options, msg);
  };
  if (auto c = resume_point(config, options)) {
    state = std::move(*c->baseline);
    log(options, "resuming at epoch " + std::to_string(state.epoch));
  } else {
    state.weights = kpnet::init_model(config.model, init_seed(config.seed));
    save();
  }
  while (state.epoch < config.baseline.epochs) {
    if (options.stop_after && state.epoch >= *options.stop_after) break;
    baseline::train_epoch(learner, state, data.train, config.baseline, config.seed);
    if (state.epoch % interval == 0 || state.epoch == config.baseline.epochs) save();
  }
  return list_series(series_dir(config));
}

}  // namespace

double adapted_val_loss(const metacore::Learner& learner, const metacore::MetaState& state,
                        const taskdata::Split& val, std::int64_t k, std::uint64_t seed) {
  double sum = 0.0;
  std::size_t n = 0;
  const auto dtype = state.weights.layers.front().arrays.front().value.scalar_type();
  for (const auto& t : val.tasks()) {
    if (t.samples.size() <= static_cast<std::size_t>(k)) continue;
    Rng rng = make_rng({seed, fnv1a64(t.day_id)});
    const auto support_idx = taskdata::draw_without_replacement(t.samples.size(),
                                                                static_cast<std::size_t>(k), rng);
    std::vector<taskdata::Sample> support;
    std::vector<taskdata::Sample> scored;
    std::vector<bool> taken(t.samples.size(), false);
    for (auto i : support_idx) {
      taken[i] = true;
      support.push_back(t.samples[i]);
    }
    for (std::size_t i = 0; i < t.samples.size(); ++i) {
      if (!taken[i]) scored.push_back(t.samples[i]);
    }
    const auto adapted = metacore::test_time_adapt(learner, state, metacore::make_batch(support, dtype));
    at::NoGradGuard no_grad;
    kpnet::BnContext ctx;
    ctx.mode = kpnet::BnMode::eval_frozen;
    const at::Tensor per =
        learner.report_loss_per_sample(adapted, metacore::make_batch(scored, dtype), ctx);
    sum += per.sum().to(at::kDouble).item<double>();
    n += scored.size();
  }
  if (n == 0) throw std::invalid_argument("no validation day has more than k images");
  return sum / static_cast<double>(n);
}

std::vector<SeriesEntry> run_training(const ExperimentConfig& config, const ExperimentData& data,
                                      const TrainOptions& options) {
  config.validate();
  require_train_domain_val(data);
  return is_meta(config.mode) ? train_meta(config, data, options)
                              : train_baseline(config, data, options);
}

}  // namespace metakey::harness
