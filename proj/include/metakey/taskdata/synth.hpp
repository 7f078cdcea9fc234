#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metakey/common/seed.hpp"
#include "metakey/taskdata/types.hpp"

namespace metakey::taskdata {

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
};

/// Appearance and geometry distribution of one synthetic season regime.
/// Day-level draws (lighting, colours, overhang) come first; per-image
/// geometry jitters around them.
struct SynthParams {
  std::string name = "synthetic-early";
  Season season = Season::early;
  int height = 128;
  int width = 128;

  Rgb row_color{0.20, 0.62, 0.18};
  double row_color_jitter = 0.04;  // per-day std per channel
  Rgb soil_color{0.46, 0.34, 0.24};
  double soil_texture_scale = 6.0;  // pixels per value-noise cell
  double soil_texture_amplitude = 0.10;
  double canopy_occlusion = 0.05;  // fraction of lane pixels covered by leaf blobs
  /// Width of the canopy hanging over the lane at the bottom row, as a
  /// fraction of half the row spacing. Labels follow the row lines, not the
  /// visible lane edge.
  double canopy_overhang = 0.05;
  double canopy_overhang_jitter = 0.03;  // per-day std
  double lighting_gain = 1.0;
  double lighting_jitter = 0.08;  // per-day std
  double clutter_density = 0.01;  // clutter blobs per 100 lane pixels
  double row_spacing = 0.9;       // lane width at the bottom row, fraction of W
  double row_spacing_jitter = 0.05;
  double yaw_jitter_deg = 6.0;
  double lateral_jitter = 0.06;  // robot offset std, fraction of W
  double horizon = 0.28;         // vanishing-point row, fraction of H
  double horizon_jitter = 0.03;
  Rgb sky_color{0.70, 0.78, 0.88};
  double pixel_noise = 0.02;
};

/// Built-in regimes: "synthetic-early", "synthetic-late",
/// "synthetic-very-late" (short aliases "early", "late", "very_late").
SynthParams synth_preset(std::string_view name);
std::vector<std::string> synth_preset_names();

/// Line through two points.
struct Line2 {
  Point2 a;
  Point2 b;
  /// y = slope * x + offset
  static Line2 from_slope_intercept(double slope, double offset);
};

/// Vanishing point is the intersection of the two row lines; each intercept
/// is the line's x at the bottom row y = H - 1. No clamping is applied.
KeypointLabel synth_keypoints(const Line2& left, const Line2& right, int height, int width);

/// Scene geometry of one image; fully determines its label.
struct SceneGeometry {
  Line2 left;
  Line2 right;
};

/// Renders `n` images for one day. Labels depend only on `geometry_seed`;
/// `noise_seed` drives texture, occlusion, clutter, colours and sensor noise.
Task synth_generate(const SynthParams& params, std::size_t n, const std::string& day_id,
                    std::uint64_t geometry_seed, std::uint64_t noise_seed);

/// Convenience overload drawing both seeds from `rng`.
Task synth_generate(const SynthParams& params, std::size_t n, const std::string& day_id, Rng& rng);

/// Per-channel means over all pixels of a task.
Rgb mean_channels(const Task& task);

}  // namespace metakey::taskdata
