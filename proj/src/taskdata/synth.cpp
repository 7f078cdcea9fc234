#include "metakey/taskdata/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace metakey::taskdata {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }

double smoothstep(double edge0, double edge1, double x) {
  const double t = clamp01((x - edge0) / (edge1 - edge0));
  return t * t * (3.0 - 2.0 * t);
}

Rgb jitter(Rgb c, double std, Rng& rng) {
  return {clamp01(c.r + std * gaussian(rng)), clamp01(c.g + std * gaussian(rng)),
          clamp01(c.b + std * gaussian(rng))};
}

/// Bilinear value noise on a coarse lattice.
class ValueNoise {
 public:
  ValueNoise(int height, int width, double cell, Rng& rng)
      : cell_(std::max(cell, 1.0)),
        gh_(static_cast<int>(height / cell_) + 2),
        gw_(static_cast<int>(width / cell_) + 2),
        grid_(static_cast<std::size_t>(gh_) * gw_) {
    for (auto& v : grid_) v = uniform01(rng) * 2.0 - 1.0;
  }

  double operator()(int y, int x) const {
    const double fy = y / cell_;
    const double fx = x / cell_;
    const int y0 = static_cast<int>(fy);
    const int x0 = static_cast<int>(fx);
    const double ty = fy - y0;
    const double tx = fx - x0;
    auto g = [&](int yy, int xx) { return grid_[static_cast<std::size_t>(yy) * gw_ + xx]; };
    const double top = g(y0, x0) * (1 - tx) + g(y0, x0 + 1) * tx;
    const double bot = g(y0 + 1, x0) * (1 - tx) + g(y0 + 1, x0 + 1) * tx;
    return top * (1 - ty) + bot * ty;
  }

 private:
  double cell_;
  int gh_;
  int gw_;
  std::vector<double> grid_;
};

struct Blob {
  double x, y, r;
  Rgb color;
};

SceneGeometry draw_geometry(const SynthParams& p, double day_horizon, double day_spacing,
                            Rng& rng) {
  const double w = p.width;
  const double h = p.height;
  const double focal = 0.9 * w;
  const double yaw = p.yaw_jitter_deg * gaussian(rng) * std::numbers::pi / 180.0;
  const double lateral = p.lateral_jitter * w * gaussian(rng);
  const double horizon = day_horizon + 0.35 * p.horizon_jitter * gaussian(rng);
  const double spacing = std::max(0.1, day_spacing + 0.5 * p.row_spacing_jitter * gaussian(rng));

  const Point2 vp{w / 2.0 + focal * std::tan(yaw), horizon * h};
  const double half = spacing * w / 2.0;
  SceneGeometry g;
  g.left = Line2{vp, {w / 2.0 - lateral - half, h - 1.0}};
  g.right = Line2{vp, {w / 2.0 - lateral + half, h - 1.0}};
  return g;
}

Image render(const SynthParams& p, const KeypointLabel& label,
             double gain, Rgb row_color, double overhang_frac, Rng& rng) {
  const int H = p.height;
  const int W = p.width;
  Image img(H, W);

  const double vx = label.vanishing_point.x;
  const double vy = label.vanishing_point.y;
  const double bottom = H - 1.0;
  const double overhang_px = overhang_frac * (label.right_x - label.left_x) / 2.0;
  const double scale = W / 128.0;

  ValueNoise soil_tex(H, W, p.soil_texture_scale * scale, rng);
  ValueNoise leaf_tex(H, W, 2.0 * scale, rng);
  ValueNoise shade(H, W, 24.0 * scale, rng);
  const Rgb soil = jitter(p.soil_color, 0.02, rng);
  const double image_gain = gain * (1.0 + 0.03 * gaussian(rng));

  // Leaf blobs hanging into the lane and clutter lying on it.
  std::vector<Blob> blobs;
  const double lane_area = std::max(0.0, (label.right_x - label.left_x) * (bottom - vy) / 2.0);
  const double mean_r = 4.0 * scale;
  const auto n_leaves = static_cast<std::size_t>(
      p.canopy_occlusion * lane_area / (std::numbers::pi * mean_r * mean_r) + uniform01(rng));
  const auto n_clutter =
      static_cast<std::size_t>(p.clutter_density * lane_area / 100.0 + uniform01(rng));
  auto lane_point = [&](double& x, double& y) {
    const double t = std::sqrt(uniform01(rng));  // denser near the camera
    y = vy + t * (bottom - vy);
    const double xl = vx + t * (label.left_x - vx);
    const double xr = vx + t * (label.right_x - vx);
    x = xl + uniform01(rng) * (xr - xl);
    return t;
  };
  for (std::size_t i = 0; i < n_leaves; ++i) {
    Blob b{};
    const double t = lane_point(b.x, b.y);
    b.r = mean_r * (0.5 + uniform01(rng)) * (0.4 + 0.6 * t);
    b.color = jitter(row_color, 0.05, rng);
    blobs.push_back(b);
  }
  for (std::size_t i = 0; i < n_clutter; ++i) {
    Blob b{};
    const double t = lane_point(b.x, b.y);
    b.r = 1.5 * scale * (0.5 + uniform01(rng)) * (0.4 + 0.6 * t);
    const double v = uniform01(rng);
    b.color = v < 0.5 ? Rgb{0.12, 0.10, 0.08} : Rgb{0.80, 0.74, 0.55};
    blobs.push_back(b);
  }

  const double horizon_soft = 1.5 * scale;
  for (int y = 0; y < H; ++y) {
    const double t = (y - vy) / (bottom - vy);
    const double xl = vx + t * (label.left_x - vx);
    const double xr = vx + t * (label.right_x - vx);
    const double ov = overhang_px * std::max(t, 0.0);
    const double edge_soft = std::max(0.6, 1.2 * scale * std::max(t, 0.0));
    for (int x = 0; x < W; ++x) {
      // Canopy wall on both sides, soil lane in between.
      const double lane = smoothstep(xl + ov - edge_soft, xl + ov + edge_soft, x) *
                          (1.0 - smoothstep(xr - ov - edge_soft, xr - ov + edge_soft, x));
      const double leaf = 0.75 + 0.25 * leaf_tex(y, x);
      const double depth = 0.7 + 0.3 * clamp01(t);
      const double soil_v = 1.0 + p.soil_texture_amplitude * soil_tex(y, x);
      Rgb ground{soil.r * soil_v * depth, soil.g * soil_v * depth, soil.b * soil_v * depth};
      Rgb crop{row_color.r * leaf, row_color.g * leaf, row_color.b * leaf};
      Rgb c{crop.r + lane * (ground.r - crop.r), crop.g + lane * (ground.g - crop.g),
            crop.b + lane * (ground.b - crop.b)};
      // Sky band above the canopy line.
      const double sky = 1.0 - smoothstep(vy - 10.0 * scale - horizon_soft,
                                          vy - 10.0 * scale + horizon_soft, y);
      c = {c.r + sky * (p.sky_color.r - c.r), c.g + sky * (p.sky_color.g - c.g),
           c.b + sky * (p.sky_color.b - c.b)};
      const double light = image_gain * (1.0 + 0.12 * shade(y, x));
      img.at(y, x, 0) = static_cast<float>(c.r * light);
      img.at(y, x, 1) = static_cast<float>(c.g * light);
      img.at(y, x, 2) = static_cast<float>(c.b * light);
    }
  }

  for (const Blob& b : blobs) {
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y - b.r - 1)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(b.y + b.r + 1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x - b.r - 1)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(b.x + b.r + 1)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double d = std::hypot(x - b.x, y - b.y);
        const double a = 1.0 - smoothstep(b.r - 0.7, b.r + 0.7, d);
        if (a <= 0.0) continue;
        const double light = image_gain * (0.9 + 0.1 * leaf_tex(y, x));
        float* px = &img.pixels[(static_cast<std::size_t>(y) * W + x) * 3];
        px[0] = static_cast<float>(px[0] + a * (b.color.r * light - px[0]));
        px[1] = static_cast<float>(px[1] + a * (b.color.g * light - px[1]));
        px[2] = static_cast<float>(px[2] + a * (b.color.b * light - px[2]));
      }
    }
  }

  for (auto& v : img.pixels) {
    v = static_cast<float>(clamp01(v + p.pixel_noise * gaussian(rng)));
  }
  return img;
}

}  // namespace

Line2 Line2::from_slope_intercept(double slope, double offset) {
  return Line2{{0.0, offset}, {1.0, slope + offset}};
}

KeypointLabel synth_keypoints(const Line2& left, const Line2& right, int height, int width) {
  (void)width;
  const Point2 d1{left.b.x - left.a.x, left.b.y - left.a.y};
  const Point2 d2{right.b.x - right.a.x, right.b.y - right.a.y};
  const double denom = cross(d1, d2);
  if (denom == 0.0 || !std::isfinite(denom)) {
    throw DataError("row lines are parallel; no vanishing point");
  }
  if (d1.y == 0.0 || d2.y == 0.0) {
    throw DataError("horizontal row line has no bottom-row intercept");
  }
  // Parametric form anchored at the left line's first point, so lines that
  // share that point reproduce it exactly.
  const Point2 delta{right.a.x - left.a.x, right.a.y - left.a.y};
  const double t = cross(delta, d2) / denom;
  KeypointLabel label;
  label.vanishing_point = {left.a.x + t * d1.x, left.a.y + t * d1.y};
  const double bottom = height - 1.0;
  if (!(label.vanishing_point.y < bottom)) {
    throw DataError("vanishing point is not above the bottom row");
  }
  label.left_x = left.a.x + (bottom - left.a.y) * d1.x / d1.y;
  label.right_x = right.a.x + (bottom - right.a.y) * d2.x / d2.y;
  return label;
}

SynthParams synth_preset(std::string_view name) {
  SynthParams p;
  if (name == "synthetic-early" || name == "early") {
    return p;
  }
  if (name == "synthetic-late" || name == "late") {
    p.name = "synthetic-late";
    p.season = Season::late;
    p.row_color = {0.10, 0.40, 0.12};
    p.soil_color = {0.36, 0.28, 0.20};
    p.soil_texture_scale = 4.0;
    p.canopy_occlusion = 0.20;
    p.canopy_overhang = 0.35;
    p.canopy_overhang_jitter = 0.06;
    p.lighting_gain = 0.72;
    p.clutter_density = 0.03;
    p.row_spacing = 0.85;
    p.horizon = 0.30;
    p.sky_color = {0.30, 0.42, 0.26};
    return p;
  }
  if (name == "synthetic-very-late" || name == "very_late" || name == "very-late") {
    p.name = "synthetic-very-late";
    p.season = Season::very_late;
    p.row_color = {0.58, 0.50, 0.22};
    p.row_color_jitter = 0.05;
    p.soil_color = {0.40, 0.31, 0.21};
    p.soil_texture_scale = 3.0;
    p.soil_texture_amplitude = 0.16;
    p.canopy_occlusion = 0.32;
    p.canopy_overhang = 0.55;
    p.canopy_overhang_jitter = 0.08;
    p.lighting_gain = 0.85;
    p.clutter_density = 0.08;
    p.row_spacing = 0.82;
    p.horizon = 0.32;
    p.sky_color = {0.62, 0.60, 0.48};
    return p;
  }
  throw DataError("unknown synthetic regime '" + std::string(name) + "'");
}

std::vector<std::string> synth_preset_names() {
  return {"synthetic-early", "synthetic-late", "synthetic-very-late"};
}

Task synth_generate(const SynthParams& params, std::size_t n, const std::string& day_id,
                    std::uint64_t geometry_seed, std::uint64_t noise_seed) {
  if (n == 0) throw DataError("synth_generate needs n >= 1");
  if (params.height < 8 || params.width < 8) throw DataError("synthetic images need H, W >= 8");

  Rng geo_rng(mix_seed({geometry_seed, 0x9e0ULL}));
  Rng noise_rng(mix_seed({noise_seed, 0x401fULL}));

  const double day_horizon = params.horizon + params.horizon_jitter * gaussian(geo_rng);
  const double day_spacing = params.row_spacing + params.row_spacing_jitter * gaussian(geo_rng);
  const double gain = std::max(0.2, params.lighting_gain + params.lighting_jitter * gaussian(noise_rng));
  const Rgb row_color = jitter(params.row_color, params.row_color_jitter, noise_rng);
  const double overhang = std::clamp(
      params.canopy_overhang + params.canopy_overhang_jitter * gaussian(noise_rng), 0.0, 0.9);

  Task task{day_id, params.season, {}};
  task.samples.reserve(n);
  while (task.samples.size() < n) {
    const SceneGeometry geo = draw_geometry(params, day_horizon, day_spacing, geo_rng);
    KeypointLabel label;
    try {
      label = synth_keypoints(geo.left, geo.right, params.height, params.width);
    } catch (const DataError&) {
      continue;  // degenerate draw; redraw the geometry
    }
    if (label.vanishing_point.y < 1.0 || label.left_x >= label.right_x) continue;

    Sample s;
    s.label = label;
    s.day_id = day_id;
    s.season = params.season;
    s.image = std::make_shared<const Image>(
        render(params, label, gain, row_color, overhang, noise_rng));
    task.samples.push_back(std::move(s));
  }
  return task;
}

Task synth_generate(const SynthParams& params, std::size_t n, const std::string& day_id, Rng& rng) {
  const std::uint64_t geometry_seed = rng();
  const std::uint64_t noise_seed = rng();
  return synth_generate(params, n, day_id, geometry_seed, noise_seed);
}

Rgb mean_channels(const Task& task) {
  double sum[3] = {0, 0, 0};
  std::size_t count = 0;
  for (const auto& s : task.samples) {
    const auto& px = s.image->pixels;
    for (std::size_t i = 0; i < px.size(); i += 3) {
      sum[0] += px[i];
      sum[1] += px[i + 1];
      sum[2] += px[i + 2];
    }
    count += px.size() / 3;
  }
  if (count == 0) return {};
  return {sum[0] / count, sum[1] / count, sum[2] / count};
}

}  // namespace metakey::taskdata
