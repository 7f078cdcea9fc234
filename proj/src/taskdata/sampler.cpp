#include "metakey/taskdata/sampler.hpp"

#include <algorithm>
#include <numeric>

namespace metakey::taskdata {

std::size_t sample_task_index(const Split& split, Rng& rng) {
  const std::size_t total = split.image_count();
  if (split.empty() || total == 0) {
    throw DataError("cannot sample a task from empty split '" + split.name() + "'");
  }
  // Inverse CDF over integer image counts: exact proportions, no float
  // accumulation error.
  std::uint64_t r = uniform_index(rng, total);
  const auto& tasks = split.tasks();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (r < tasks[i].size()) return i;
    r -= tasks[i].size();
  }
  return tasks.size() - 1;
}

const Task& sample_task(const Split& split, Rng& rng) {
  return split.tasks()[sample_task_index(split, rng)];
}

std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t count, Rng& rng) {
  if (count > n) throw DataError("cannot draw " + std::to_string(count) + " of " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  }
  idx.resize(count);
  return idx;
}

EpisodeBatch sample_episode(const Split& split, const EpisodeShape& shape, Rng& rng) {
  const std::size_t need = shape.k + shape.q;
  const auto& tasks = split.tasks();
  if (std::none_of(tasks.begin(), tasks.end(), [&](const Task& t) { return t.size() >= need; })) {
    throw DataError("no day in split '" + split.name() + "' has the " + std::to_string(need) +
                    " samples an episode needs (k=" + std::to_string(shape.k) +
                    ", q=" + std::to_string(shape.q) + ")");
  }

  EpisodeBatch batch;
  batch.entries.reserve(shape.meta_batch);
  for (std::size_t e = 0; e < shape.meta_batch; ++e) {
    std::size_t ti = sample_task_index(split, rng);
    std::size_t attempts = 0;
    while (tasks[ti].size() < need) {
      if (++attempts > shape.retry_bound) {
        throw DataError("episode sampling exceeded the retry bound of " +
                        std::to_string(shape.retry_bound) + " redraws in split '" + split.name() +
                        "'");
      }
      ti = sample_task_index(split, rng);
    }
    const Task& task = tasks[ti];
    auto drawn = draw_without_replacement(task.size(), need, rng);

    EpisodeEntry entry;
    entry.task_index = ti;
    entry.day_id = task.day_id;
    entry.season = task.season;
    entry.support_indices.assign(drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(shape.k));
    entry.query_indices.assign(drawn.begin() + static_cast<std::ptrdiff_t>(shape.k), drawn.end());
    for (auto i : entry.support_indices) entry.support.push_back(task.samples[i]);
    for (auto i : entry.query_indices) entry.query.push_back(task.samples[i]);
    batch.entries.push_back(std::move(entry));
  }
  return batch;
}

}  // namespace metakey::taskdata
