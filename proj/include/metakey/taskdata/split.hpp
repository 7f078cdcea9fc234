#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metakey/taskdata/types.hpp"

namespace metakey::taskdata {

struct SplitSpec {
  std::string name;
  std::vector<std::string> day_ids;
  /// When present the built split must match it exactly.
  std::optional<Composition> declared;
};

class Split {
 public:
  Split() = default;
  Split(std::string name, std::vector<Task> tasks);

  const std::string& name() const { return name_; }
  const std::vector<Task>& tasks() const { return tasks_; }
  bool empty() const { return tasks_.empty(); }
  std::size_t image_count() const;
  Composition composition() const { return composition_of(tasks_); }
  std::vector<Season> seasons() const;

 private:
  std::string name_;
  std::vector<Task> tasks_;
};

Split make_split(const TaskCollection& collection, const SplitSpec& spec);

/// Train/val/test portions of one day, drawn by a shuffle keyed on day_id.
struct DayPartition {
  Task train;
  Task val;
  Task test;
};

inline constexpr double kValFraction = 0.15;
inline constexpr double kTestFraction = 0.15;

/// Deterministic 70/15/15 partition of a day's samples.
DayPartition partition_day(const Task& task, std::uint64_t seed);

/// Applies partition_day to every task of a split and keeps one portion.
enum class Portion { train, val, test };
Split split_portion(const Split& split, Portion portion, std::uint64_t seed);

/// Throws if any two of the day-id sets share a day.
void require_disjoint_days(const std::vector<const Split*>& splits);

/// Expands "early-d{00..07}" style brace ranges in a day list. Other entries
/// pass through unchanged.
std::vector<std::string> expand_day_list(const std::vector<std::string>& entries);

/// Parses "early:13/6089, late:29/14897" into a composition declaration.
Composition parse_composition(std::string_view text);

}  // namespace metakey::taskdata
