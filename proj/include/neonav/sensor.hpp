#ifndef NEONAV_SENSOR_HPP
#define NEONAV_SENSOR_HPP

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "neonav/gridworld.hpp"

namespace neonav {

/// Rendering parameters. fov defaults to 360/K so the K views tile the circle.
struct SensorConfig {
  int azimuths = kDefaultAzimuths;
  int rays = 32;
  double max_range_cells = 8.0;

  [[nodiscard]] double fov_deg() const noexcept { return 360.0 / azimuths; }
  [[nodiscard]] double max_range_m(const OccupancyGrid& g) const noexcept {
    return max_range_cells * g.cell_size_m;
  }
};

/// One-dimensional depth image: W normalized ranges in (0, 1], ordered from
/// the left edge of the field of view to the right.
struct DepthScan {
  std::vector<double> values;
  friend bool operator==(const DepthScan&, const DepthScan&) = default;
};

/// K scans at the agent's cell, views[i] rendered at azimuth (a + i) mod K.
struct Observation {
  std::vector<DepthScan> views;
  Pose pose_of_record;  // debug metadata only
  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Angle (degrees, ccw from north) of ray `i` for a view at `azimuth`.
/// Ray W/2 points along the heading; spacing is fov/W, so the K views
/// together sample the circle uniformly without overlap.
inline double ray_angle_deg(const SensorConfig& cfg, int azimuth, int i) noexcept {
  const double fov = cfg.fov_deg();
  return heading_deg(azimuth, cfg.azimuths) + fov / 2.0 - i * fov / cfg.rays;
}

/// Direction (drow, dcol) of a heading. Exact on axis-aligned headings so
/// that axis rays never pick up a spurious 1e-17 component.
inline std::pair<double, double> ray_direction(double angle_deg) noexcept {
  double a = std::fmod(angle_deg, 360.0);
  if (a < 0) a += 360.0;
  if (a == 0.0) return {-1.0, 0.0};
  if (a == 90.0) return {0.0, -1.0};
  if (a == 180.0) return {1.0, 0.0};
  if (a == 270.0) return {0.0, 1.0};
  const double rad = a * std::numbers::pi / 180.0;
  return {-std::cos(rad), -std::sin(rad)};
}

/// Distance in cells from (row0, col0) (continuous coordinates, cell (r, c)
/// spans [r, r+1) x [c, c+1)) along (drow, dcol) to the first blocked cell
/// boundary, by grid traversal. Stops early at `max_cells`.
inline double cast_ray_cells(const OccupancyGrid& grid, double row0, double col0, double drow,
                             double dcol, double max_cells) noexcept {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  int r = static_cast<int>(std::floor(row0));
  int c = static_cast<int>(std::floor(col0));
  const int step_r = drow > 0 ? 1 : -1;
  const int step_c = dcol > 0 ? 1 : -1;
  const double delta_r = drow != 0.0 ? std::abs(1.0 / drow) : kInf;
  const double delta_c = dcol != 0.0 ? std::abs(1.0 / dcol) : kInf;
  double t_r = drow != 0.0 ? (drow > 0 ? (r + 1 - row0) : (row0 - r)) * delta_r : kInf;
  double t_c = dcol != 0.0 ? (dcol > 0 ? (c + 1 - col0) : (col0 - c)) * delta_c : kInf;
  if (grid.is_blocked(r, c)) return 0.0;
  for (;;) {
    double t;
    if (t_r < t_c) {
      t = t_r;
      r += step_r;
      t_r += delta_r;
    } else {
      t = t_c;
      c += step_c;
      t_c += delta_c;
    }
    if (t >= max_cells) return max_cells;
    if (grid.is_blocked(r, c)) return t;
  }
}

inline DepthScan render_view(const OccupancyGrid& grid, const Pose& pose, const SensorConfig& cfg = {}) {
  DepthScan scan;
  scan.values.resize(static_cast<std::size_t>(cfg.rays));
  const double row0 = pose.row + 0.5;
  const double col0 = pose.col + 0.5;
  for (int i = 0; i < cfg.rays; ++i) {
    const auto [dr, dc] = ray_direction(ray_angle_deg(cfg, pose.azimuth, i));
    const double cells = cast_ray_cells(grid, row0, col0, dr, dc, cfg.max_range_cells);
    scan.values[static_cast<std::size_t>(i)] = cells / cfg.max_range_cells;
  }
  return scan;
}

inline Observation observe(const OccupancyGrid& grid, const Pose& pose, const SensorConfig& cfg = {}) {
  Observation obs;
  obs.pose_of_record = pose;
  obs.views.reserve(static_cast<std::size_t>(cfg.azimuths));
  for (int i = 0; i < cfg.azimuths; ++i) {
    Pose view = pose;
    view.azimuth = (pose.azimuth + i) % cfg.azimuths;
    obs.views.push_back(render_view(grid, view, cfg));
  }
  return obs;
}

/// Memoized per-pose front views for one grid. Rendering is pure, so the
/// cache is an exact substitute for calling render_view.
class ViewCache {
 public:
  ViewCache(const OccupancyGrid& grid, const SensorConfig& cfg) : grid_(&grid), cfg_(cfg) {
    views_.resize(grid.blocked.size() * static_cast<std::size_t>(cfg.azimuths));
    for (int r = 0; r < grid.height; ++r)
      for (int c = 0; c < grid.width; ++c)
        if (grid.is_free(r, c))
          for (int a = 0; a < cfg.azimuths; ++a) views_[slot({r, c, a})] = render_view(grid, {r, c, a}, cfg);
  }

  [[nodiscard]] const DepthScan& view(const Pose& p) const { return views_[slot(p)]; }

  [[nodiscard]] Observation observe(const Pose& p) const {
    Observation obs;
    obs.pose_of_record = p;
    for (int i = 0; i < cfg_.azimuths; ++i)
      obs.views.push_back(view({p.row, p.col, (p.azimuth + i) % cfg_.azimuths}));
    return obs;
  }

  [[nodiscard]] const OccupancyGrid& grid() const noexcept { return *grid_; }
  [[nodiscard]] const SensorConfig& config() const noexcept { return cfg_; }

 private:
  [[nodiscard]] std::size_t slot(const Pose& p) const noexcept {
    return grid_->index(p.row, p.col) * static_cast<std::size_t>(cfg_.azimuths) +
           static_cast<std::size_t>(p.azimuth);
  }

  const OccupancyGrid* grid_;
  SensorConfig cfg_;
  std::vector<DepthScan> views_;
};

}  // namespace neonav

#endif  // NEONAV_SENSOR_HPP
