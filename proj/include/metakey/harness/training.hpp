#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "metakey/harness/checkpoint.hpp"
#include "metakey/harness/experiment.hpp"
#include "metakey/metacore/learner.hpp"

namespace metakey::harness {

using LogSink = std::function<void(const std::string&)>;

/// Honours METAKEY_DETERMINISTIC=1: one intra-op thread and deterministic
/// kernels. Returns whether deterministic mode is on.
bool apply_determinism_from_env();

struct SeriesEntry {
  std::filesystem::path path;
  std::int64_t index = 0;
  double val_loss = 0.0;
  std::vector<std::string> val_seasons;
};

struct TrainOptions {
  /// Continue from the newest checkpoint in the output directory.
  bool resume = false;
  /// Stop once this many episodes (or epochs) are complete, as if the
  /// process had been killed there. Work after the last checkpoint is lost.
  std::optional<std::int64_t> stop_after;
  LogSink log;
};

/// Directory holding the checkpoints of one mode.
std::filesystem::path series_dir(const ExperimentConfig& config);
std::filesystem::path checkpoint_path(const ExperimentConfig& config, std::int64_t index);

/// Checkpoints found in `dir`, sorted by index.
std::vector<SeriesEntry> list_series(const std::filesystem::path& dir);

/// Trains per the config and returns the checkpoint series written so far.
/// Meta modes checkpoint every validation interval; baseline also keeps the
/// untrained starting point.
std::vector<SeriesEntry> run_training(const ExperimentConfig& config, const ExperimentData& data,
                                      const TrainOptions& options = {});

/// Position of the lowest validation loss, earliest on ties. Throws if the
/// series is empty or any entry was validated on seasons other than
/// `train_domain`.
std::size_t select_checkpoint(const std::vector<SeriesEntry>& series,
                              const std::set<taskdata::Season>& train_domain);

/// Image-weighted pixel loss on `val` after test-time adaptation from k
/// support images per day (drawn from `seed`). Days with <= k images are
/// skipped.
double adapted_val_loss(const metacore::Learner& learner, const metacore::MetaState& state,
                        const taskdata::Split& val, std::int64_t k, std::uint64_t seed);

/// Seed of the initial weights for an experiment seed.
std::uint64_t init_seed(std::uint64_t seed);

}  // namespace metakey::harness
