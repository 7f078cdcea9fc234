#include "metakey/taskdata/split.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

#include "metakey/common/seed.hpp"

namespace metakey::taskdata {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::size_t parse_count(std::string_view s, std::string_view context) {
  s = trim(s);
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError("expected a count in '" + std::string(context) + "', got '" + std::string(s) +
                    "'");
  }
  return v;
}

}  // namespace

Split::Split(std::string name, std::vector<Task> tasks)
    : name_(std::move(name)), tasks_(std::move(tasks)) {}

std::size_t Split::image_count() const {
  std::size_t n = 0;
  for (const auto& t : tasks_) n += t.size();
  return n;
}

std::vector<Season> Split::seasons() const {
  std::vector<Season> out;
  for (const auto& [season, count] : composition()) out.push_back(season);
  return out;
}

Split make_split(const TaskCollection& collection, const SplitSpec& spec) {
  std::vector<Task> tasks;
  std::set<std::string> seen;
  for (const auto& day : spec.day_ids) {
    if (!seen.insert(day).second) {
      throw DataError("split '" + spec.name + "' lists day '" + day + "' twice");
    }
    const Task* t = collection.find(day);
    if (t == nullptr) {
      throw DataError("split '" + spec.name + "' references unknown day_id '" + day + "'");
    }
    tasks.push_back(*t);
  }
  Split split(spec.name, std::move(tasks));
  if (spec.declared) {
    const Composition found = split.composition();
    if (found != *spec.declared) {
      throw DataError("split '" + spec.name + "' composition mismatch: expected " +
                      describe(*spec.declared) + ", found " + describe(found));
    }
  }
  return split;
}

DayPartition partition_day(const Task& task, std::uint64_t seed) {
  const std::size_t n = task.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng({seed, fnv1a64(task.day_id), 0x70a17ULL});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(rng, i)]);
  }
  const auto n_val = static_cast<std::size_t>(std::llround(kValFraction * static_cast<double>(n)));
  const auto n_test =
      static_cast<std::size_t>(std::llround(kTestFraction * static_cast<double>(n)));

  DayPartition out;
  for (Task* part : {&out.train, &out.val, &out.test}) {
    part->day_id = task.day_id;
    part->season = task.season;
  }
  // Keep manifest order inside each portion.
  std::vector<int> role(n, 0);
  for (std::size_t i = 0; i < n_val && i < n; ++i) role[order[i]] = 1;
  for (std::size_t i = n_val; i < n_val + n_test && i < n; ++i) role[order[i]] = 2;
  for (std::size_t i = 0; i < n; ++i) {
    Task& dst = role[i] == 0 ? out.train : (role[i] == 1 ? out.val : out.test);
    dst.samples.push_back(task.samples[i]);
  }
  return out;
}

Split split_portion(const Split& split, Portion portion, std::uint64_t seed) {
  std::vector<Task> tasks;
  for (const auto& t : split.tasks()) {
    DayPartition p = partition_day(t, seed);
    Task& chosen = portion == Portion::train ? p.train : (portion == Portion::val ? p.val : p.test);
    if (!chosen.samples.empty()) tasks.push_back(std::move(chosen));
  }
  const char* suffix = portion == Portion::train ? "/train" : (portion == Portion::val ? "/val" : "/test");
  return Split(split.name() + suffix, std::move(tasks));
}

void require_disjoint_days(const std::vector<const Split*>& splits) {
  std::map<std::string, std::string> owner;
  for (const Split* s : splits) {
    for (const auto& t : s->tasks()) {
      auto [it, inserted] = owner.emplace(t.day_id, s->name());
      if (!inserted && it->second != s->name()) {
        throw DataError("day '" + t.day_id + "' appears in both '" + it->second + "' and '" +
                        s->name() + "'");
      }
    }
  }
}

std::vector<std::string> expand_day_list(const std::vector<std::string>& entries) {
  std::vector<std::string> out;
  for (const auto& raw : entries) {
    const std::string entry(trim(raw));
    const auto open = entry.find('{');
    const auto dots = entry.find("..", open == std::string::npos ? 0 : open);
    const auto close = entry.find('}', dots == std::string::npos ? 0 : dots);
    if (open == std::string::npos || dots == std::string::npos || close == std::string::npos) {
      if (!entry.empty()) out.push_back(entry);
      continue;
    }
    const std::string lo_text = entry.substr(open + 1, dots - open - 1);
    const std::string hi_text = entry.substr(dots + 2, close - dots - 2);
    const std::size_t lo = parse_count(lo_text, entry);
    const std::size_t hi = parse_count(hi_text, entry);
    if (hi < lo) throw DataError("empty day range '" + entry + "'");
    const std::size_t width = lo_text.size();
    const std::string prefix = entry.substr(0, open);
    const std::string suffix = entry.substr(close + 1);
    for (std::size_t i = lo; i <= hi; ++i) {
      std::string num = std::to_string(i);
      if (num.size() < width) num.insert(0, width - num.size(), '0');
      out.push_back(prefix + num + suffix);
    }
  }
  return out;
}

Composition parse_composition(std::string_view text) {
  Composition c;
  while (!text.empty()) {
    const auto comma = text.find(',');
    std::string_view item = trim(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    const auto slash = item.find('/');
    if (colon == std::string_view::npos || slash == std::string_view::npos || slash < colon) {
      throw DataError("composition entries look like 'early:13/6089', got '" + std::string(item) +
                      "'");
    }
    const Season s = parse_season(trim(item.substr(0, colon)));
    SeasonCount count{parse_count(item.substr(colon + 1, slash - colon - 1), item),
                      parse_count(item.substr(slash + 1), item)};
    if (count.days == 0 && count.images == 0) continue;
    c[s] = count;
  }
  return c;
}

}  // namespace metakey::taskdata
