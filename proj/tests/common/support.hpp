#pragma once

#include <memory>
#include <string>

#include "metakey/taskdata/types.hpp"

namespace metakey::test {

/// Task of `n` samples sharing one blank 8x8 image; sample i has a label
/// that identifies it (left_x = i).
inline taskdata::Task make_task(const std::string& day, taskdata::Season season, std::size_t n) {
  auto img = std::make_shared<const taskdata::Image>(8, 8);
  taskdata::Task t{day, season, {}};
  for (std::size_t i = 0; i < n; ++i) {
    taskdata::Sample s;
    s.image = img;
    s.label = {{4.0, 1.0}, static_cast<double>(i), static_cast<double>(i) + 7.0};
    s.day_id = day;
    s.season = season;
    t.samples.push_back(std::move(s));
  }
  return t;
}

}  // namespace metakey::test
