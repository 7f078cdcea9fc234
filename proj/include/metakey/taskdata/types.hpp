#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace metakey::taskdata {

enum class Season { early, late, very_late };

inline constexpr Season kAllSeasons[] = {Season::early, Season::late, Season::very_late};

std::string_view to_string(Season s);
/// Accepts "early", "late", "very_late" (also "very-late"); throws on anything else.
Season parse_season(std::string_view text);

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// Three semantic keypoints of a crop lane, in pixels with the origin at the
/// top-left corner. The intercepts live on the bottom image row (y = H - 1).
/// Coordinates may fall outside the frame.
struct KeypointLabel {
  Point2 vanishing_point;
  double left_x = 0.0;
  double right_x = 0.0;
  bool operator==(const KeypointLabel&) const = default;
};

/// Interleaved HxWx3 image, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

struct Sample {
  std::shared_ptr<const Image> image;
  KeypointLabel label;
  std::string day_id;
  Season season = Season::early;
  /// Manifest-relative path; empty for in-memory samples.
  std::string image_path;
};

/// All samples recorded on one day.
struct Task {
  std::string day_id;
  Season season = Season::early;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

/// Immutable set of tasks keyed by day. Tasks keep first-seen order.
class TaskCollection {
 public:
  TaskCollection() = default;
  explicit TaskCollection(std::vector<Task> tasks);

  const std::vector<Task>& tasks() const { return tasks_; }
  const Task* find(std::string_view day_id) const;
  const Task& at(std::string_view day_id) const;
  std::size_t sample_count() const;

 private:
  std::vector<Task> tasks_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct SeasonCount {
  std::size_t days = 0;
  std::size_t images = 0;
  bool operator==(const SeasonCount&) const = default;
};

using Composition = std::map<Season, SeasonCount>;

std::string describe(const Composition& c);

/// Composition of a task list; seasons without days are omitted.
Composition composition_of(const std::vector<Task>& tasks);

}  // namespace metakey::taskdata
