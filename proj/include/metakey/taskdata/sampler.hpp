#pragma once

#include <cstddef>
#include <vector>

#include "metakey/common/seed.hpp"
#include "metakey/taskdata/split.hpp"

namespace metakey::taskdata {

/// Draws a task with probability proportional to its image count.
/// Returns the index into split.tasks().
std::size_t sample_task_index(const Split& split, Rng& rng);
const Task& sample_task(const Split& split, Rng& rng);

struct EpisodeEntry {
  std::size_t task_index = 0;
  std::string day_id;
  Season season = Season::early;
  /// Indices into the task's sample list.
  std::vector<std::size_t> support_indices;
  std::vector<std::size_t> query_indices;
  std::vector<Sample> support;
  std::vector<Sample> query;
};

struct EpisodeBatch {
  std::vector<EpisodeEntry> entries;
  std::size_t meta_batch_size() const { return entries.size(); }
};

struct EpisodeShape {
  std::size_t k = 5;
  std::size_t q = 10;
  std::size_t meta_batch = 4;
  /// Redraws allowed per entry when a day is too small.
  std::size_t retry_bound = 64;
};

EpisodeBatch sample_episode(const Split& split, const EpisodeShape& shape, Rng& rng);

/// First `count` entries of a uniformly random permutation of [0, n).
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t count, Rng& rng);

}  // namespace metakey::taskdata
