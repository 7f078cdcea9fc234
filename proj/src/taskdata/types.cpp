#include "metakey/taskdata/types.hpp"

#include <sstream>

namespace metakey::taskdata {

std::string_view to_string(Season s) {
  switch (s) {
    case Season::early:
      return "early";
    case Season::late:
      return "late";
    case Season::very_late:
      return "very_late";
  }
  return "unknown";
}

Season parse_season(std::string_view text) {
  if (text == "early") return Season::early;
  if (text == "late") return Season::late;
  if (text == "very_late" || text == "very-late") return Season::very_late;
  throw DataError("unknown season '" + std::string(text) + "'");
}

TaskCollection::TaskCollection(std::vector<Task> tasks) : tasks_(std::move(tasks)) {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const auto& t = tasks_[i];
    for (const auto& s : t.samples) {
      if (s.day_id != t.day_id || s.season != t.season) {
        throw DataError("sample in task '" + t.day_id + "' carries day '" + s.day_id +
                        "' / season '" + std::string(to_string(s.season)) + "'");
      }
    }
    if (!index_.emplace(t.day_id, i).second) {
      throw DataError("duplicate day_id '" + t.day_id + "' in collection");
    }
  }
}

const Task* TaskCollection::find(std::string_view day_id) const {
  auto it = index_.find(day_id);
  return it == index_.end() ? nullptr : &tasks_[it->second];
}

const Task& TaskCollection::at(std::string_view day_id) const {
  if (const Task* t = find(day_id)) return *t;
  throw DataError("unknown day_id '" + std::string(day_id) + "'");
}

std::size_t TaskCollection::sample_count() const {
  std::size_t n = 0;
  for (const auto& t : tasks_) n += t.size();
  return n;
}

std::string describe(const Composition& c) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [season, count] : c) {
    if (!first) os << ", ";
    first = false;
    os << to_string(season) << ": " << count.days << " days / " << count.images << " images";
  }
  if (first) os << "(empty)";
  return os.str();
}

Composition composition_of(const std::vector<Task>& tasks) {
  Composition c;
  for (const auto& t : tasks) {
    auto& entry = c[t.season];
    entry.days += 1;
    entry.images += t.size();
  }
  return c;
}

}  // namespace metakey::taskdata
