#ifndef NEONAV_GRIDWORLD_HPP
#define NEONAV_GRIDWORLD_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neonav/io.hpp"
#include "neonav/rng.hpp"

namespace neonav {

inline constexpr int kDefaultAzimuths = 4;

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

enum class Action : std::uint8_t {
  MoveForward = 0,
  MoveBack = 1,
  MoveLeft = 2,
  MoveRight = 3,
  RotateCcw = 4,
  RotateCw = 5,
  Stop = 6,
};

inline constexpr int kActionCount = 7;

inline constexpr std::array<Action, kActionCount> kAllActions = {
    Action::MoveForward, Action::MoveBack, Action::MoveLeft, Action::MoveRight,
    Action::RotateCcw,   Action::RotateCw, Action::Stop};

using OneHot = std::array<double, kActionCount>;

constexpr int action_index(Action a) noexcept { return static_cast<int>(a); }

inline Action action_from_index(int i) {
  if (i < 0 || i >= kActionCount) throw Error("schema", "action code out of range: " + std::to_string(i));
  return static_cast<Action>(i);
}

constexpr bool is_translation(Action a) noexcept {
  return a == Action::MoveForward || a == Action::MoveBack || a == Action::MoveLeft ||
         a == Action::MoveRight;
}

constexpr OneHot one_hot(Action a) noexcept {
  OneHot v{};
  v[static_cast<std::size_t>(action_index(a))] = 1.0;
  return v;
}

/// Inverse of one_hot. Anything other than a single 1 among zeros is rejected.
inline Action decode_one_hot(const OneHot& v) {
  int hit = -1;
  for (int i = 0; i < kActionCount; ++i) {
    if (v[static_cast<std::size_t>(i)] == 1.0) {
      if (hit >= 0) throw Error("schema", "one-hot has more than one active entry");
      hit = i;
    } else if (v[static_cast<std::size_t>(i)] != 0.0) {
      throw Error("schema", "one-hot entries must be 0 or 1");
    }
  }
  if (hit < 0) throw Error("schema", "one-hot has no active entry");
  return static_cast<Action>(hit);
}

inline std::string_view action_name(Action a) noexcept {
  switch (a) {
    case Action::MoveForward: return "move_forward";
    case Action::MoveBack: return "move_back";
    case Action::MoveLeft: return "move_left";
    case Action::MoveRight: return "move_right";
    case Action::RotateCcw: return "rotate_ccw";
    case Action::RotateCw: return "rotate_cw";
    case Action::Stop: return "stop";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Grid and pose
// ---------------------------------------------------------------------------

struct Pose {
  int row = 0;
  int col = 0;
  int azimuth = 0;

  friend bool operator==(const Pose&, const Pose&) = default;
};

/// Blocked/free mask, row-major. Border cells are always blocked and free
/// cells form a single 4-connected component once produced by
/// generate_scene or load_scene.
struct OccupancyGrid {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> blocked;
  double cell_size_m = 0.5;
  std::uint64_t seed = 0;

  [[nodiscard]] bool in_bounds(int row, int col) const noexcept {
    return row >= 0 && col >= 0 && row < height && col < width;
  }
  [[nodiscard]] std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(col);
  }
  [[nodiscard]] bool is_blocked(int row, int col) const noexcept {
    return !in_bounds(row, col) || blocked[index(row, col)] != 0;
  }
  [[nodiscard]] bool is_free(int row, int col) const noexcept { return !is_blocked(row, col); }

  [[nodiscard]] std::vector<std::pair<int, int>> free_cells() const {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c)
        if (is_free(r, c)) out.emplace_back(r, c);
    return out;
  }

  [[nodiscard]] std::size_t free_count() const noexcept {
    return static_cast<std::size_t>(std::count(blocked.begin(), blocked.end(), std::uint8_t{0}));
  }

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;
};

inline bool pose_valid(const OccupancyGrid& grid, const Pose& p, int azimuths = kDefaultAzimuths) noexcept {
  return grid.is_free(p.row, p.col) && p.azimuth >= 0 && p.azimuth < azimuths;
}

/// Heading angle in degrees, counter-clockwise from north. Azimuth 0 faces
/// decreasing row.
inline double heading_deg(int azimuth, int azimuths) noexcept {
  return 360.0 * azimuth / azimuths;
}

/// Unit grid step (drow, dcol) for a heading, snapped to the nearest axis.
/// For K a multiple of 4 every heading is axis-aligned and the snap is exact.
inline std::pair<int, int> axis_step(double angle_deg) noexcept {
  double a = std::fmod(angle_deg, 360.0);
  if (a < 0) a += 360.0;
  const int quadrant = static_cast<int>(std::floor((a + 45.0) / 90.0)) % 4;
  constexpr std::array<std::pair<int, int>, 4> kDirs = {{{-1, 0}, {0, -1}, {1, 0}, {0, 1}}};
  return kDirs[static_cast<std::size_t>(quadrant)];
}

struct ActionOutcome {
  Pose next_pose;
  bool collided = false;
  bool terminal = false;
};

/// Deterministic dynamics. Translations move one cell in the heading frame;
/// blocked or off-grid destinations leave the pose unchanged and report a
/// collision.
inline ActionOutcome step(const OccupancyGrid& grid, const Pose& pose, Action action,
                          int azimuths = kDefaultAzimuths) noexcept {
  ActionOutcome out{pose, false, false};
  const double heading = heading_deg(pose.azimuth, azimuths);
  double move_angle = 0.0;
  switch (action) {
    case Action::Stop:
      out.terminal = true;
      return out;
    case Action::RotateCcw:
      out.next_pose.azimuth = (pose.azimuth + 1) % azimuths;
      return out;
    case Action::RotateCw:
      out.next_pose.azimuth = (pose.azimuth + azimuths - 1) % azimuths;
      return out;
    case Action::MoveForward: move_angle = heading; break;
    case Action::MoveBack: move_angle = heading + 180.0; break;
    case Action::MoveLeft: move_angle = heading + 90.0; break;
    case Action::MoveRight: move_angle = heading - 90.0; break;
  }
  const auto [dr, dc] = axis_step(move_angle);
  const int r = pose.row + dr;
  const int c = pose.col + dc;
  if (grid.is_blocked(r, c)) {
    out.collided = true;
    return out;
  }
  out.next_pose.row = r;
  out.next_pose.col = c;
  return out;
}

inline double euclidean_distance_m(const OccupancyGrid& grid, const Pose& a, const Pose& b) noexcept {
  const double dr = a.row - b.row;
  const double dc = a.col - b.col;
  return grid.cell_size_m * std::sqrt(dr * dr + dc * dc);
}

/// Smallest azimuth-index difference on the circle.
inline int azimuth_gap(int a, int b, int azimuths) noexcept {
  const int d = std::abs(a - b) % azimuths;
  return std::min(d, azimuths - d);
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

namespace detail {

/// Label 4-connected components of free cells in row-major discovery order.
/// Returns (labels, component sizes); blocked cells get label -1.
inline std::pair<std::vector<int>, std::vector<int>> label_components(const OccupancyGrid& g) {
  std::vector<int> label(g.blocked.size(), -1);
  std::vector<int> sizes;
  std::deque<std::pair<int, int>> queue;
  constexpr std::array<std::pair<int, int>, 4> kNbr = {{{-1, 0}, {0, -1}, {1, 0}, {0, 1}}};
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      if (g.is_blocked(r, c) || label[g.index(r, c)] >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      sizes.push_back(0);
      label[g.index(r, c)] = id;
      queue.emplace_back(r, c);
      while (!queue.empty()) {
        auto [cr, cc] = queue.front();
        queue.pop_front();
        ++sizes.back();
        for (auto [dr, dc] : kNbr) {
          const int nr = cr + dr, nc = cc + dc;
          if (g.is_free(nr, nc) && label[g.index(nr, nc)] < 0) {
            label[g.index(nr, nc)] = id;
            queue.emplace_back(nr, nc);
          }
        }
      }
    }
  }
  return {std::move(label), std::move(sizes)};
}

/// Join one stray component to the largest one by unblocking the cells of a
/// shortest interior corridor. Returns false once the grid is connected.
inline bool repair_once(OccupancyGrid& g) {
  auto [label, sizes] = label_components(g);
  if (sizes.size() <= 1) return false;
  const int main = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

  // Multi-source BFS from the main component through interior cells
  // (blocked or not); first non-main free cell reached ends the search.
  constexpr std::array<std::pair<int, int>, 4> kNbr = {{{-1, 0}, {0, -1}, {1, 0}, {0, 1}}};
  std::vector<int> parent(g.blocked.size(), -2);
  std::deque<int> queue;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] == main) {
      parent[i] = -1;
      queue.push_back(static_cast<int>(i));
    }
  }
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    const int r = cur / g.width, c = cur % g.width;
    for (auto [dr, dc] : kNbr) {
      const int nr = r + dr, nc = c + dc;
      if (nr < 1 || nc < 1 || nr >= g.height - 1 || nc >= g.width - 1) continue;
      const auto ni = g.index(nr, nc);
      if (parent[ni] != -2) continue;
      parent[ni] = cur;
      if (label[ni] >= 0 && label[ni] != main) {
        for (int walk = cur; parent[static_cast<std::size_t>(walk)] != -1;
             walk = parent[static_cast<std::size_t>(walk)]) {
          g.blocked[static_cast<std::size_t>(walk)] = 0;
        }
        return true;
      }
      queue.push_back(static_cast<int>(ni));
    }
  }
  return false;  // unreachable for grids with a free interior
}

}  // namespace detail

/// Procedural scene.
///
/// Sampling procedure (replayable): a SplitMix64 stream seeded with `seed`
/// draws one uniform per interior cell in row-major order; the cell is
/// blocked when the draw is below `obstacle_density`. Stray free components
/// are then merged into the largest one (earliest on ties) by unblocking the
/// shortest interior corridor found by BFS (N, W, S, E expansion order),
/// repeatedly until one component remains.
inline OccupancyGrid generate_scene(std::uint64_t seed, int width, int height, double obstacle_density,
                                    double cell_size_m = 0.5) {
  if (width < 4 || height < 4) throw Error("config", "scene must be at least 4x4 cells");
  if (!(obstacle_density >= 0.0 && obstacle_density < 1.0))
    throw Error("config", "obstacle density must lie in [0, 1)");
  if (!(cell_size_m > 0.0)) throw Error("config", "cell size must be positive");

  OccupancyGrid g;
  g.width = width;
  g.height = height;
  g.cell_size_m = cell_size_m;
  g.seed = seed;
  g.blocked.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 1);

  SplitMix64 rng(seed);
  for (int r = 1; r < height - 1; ++r)
    for (int c = 1; c < width - 1; ++c)
      g.blocked[g.index(r, c)] = rng.uniform() < obstacle_density ? 1 : 0;

  if (g.free_count() < 4)
    throw Error("config", "obstacle density leaves fewer than 4 free interior cells");
  while (detail::repair_once(g)) {
  }
  return g;
}

/// True when free cells form one 4-connected component and the border is solid.
inline bool scene_well_formed(const OccupancyGrid& g) {
  if (g.width < 1 || g.height < 1 ||
      g.blocked.size() != static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height))
    return false;
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c)
      if ((r == 0 || c == 0 || r == g.height - 1 || c == g.width - 1) && g.is_free(r, c)) return false;
  return detail::label_components(g).second.size() == 1;
}

// ---------------------------------------------------------------------------
// Scene file
// ---------------------------------------------------------------------------

inline constexpr int kSceneFormatVersion = 1;

inline Json scene_to_json(const OccupancyGrid& g, std::string_view config_hash = {}) {
  Json rows = Json::array();
  for (int r = 0; r < g.height; ++r) {
    std::string line(static_cast<std::size_t>(g.width), '0');
    for (int c = 0; c < g.width; ++c)
      if (g.blocked[g.index(r, c)]) line[static_cast<std::size_t>(c)] = '1';
    rows.push_back(std::move(line));
  }
  Json doc = {{"version", kSceneFormatVersion},
              {"seed", g.seed},
              {"width", g.width},
              {"height", g.height},
              {"cell_size_m", g.cell_size_m},
              {"blocked", std::move(rows)}};
  if (!config_hash.empty()) doc["config_hash"] = std::string(config_hash);
  return doc;
}

inline OccupancyGrid scene_from_json(const Json& doc) {
  if (io::field<int>(doc, "version") != kSceneFormatVersion)
    throw Error("schema", "unsupported scene version");
  OccupancyGrid g;
  g.seed = io::field<std::uint64_t>(doc, "seed");
  g.width = io::field<int>(doc, "width");
  g.height = io::field<int>(doc, "height");
  g.cell_size_m = io::field<double>(doc, "cell_size_m");
  const auto rows = io::field<std::vector<std::string>>(doc, "blocked");
  if (g.width < 1 || g.height < 1 || rows.size() != static_cast<std::size_t>(g.height))
    throw Error("schema", "scene row count does not match height");
  g.blocked.reserve(static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height));
  for (const auto& line : rows) {
    if (line.size() != static_cast<std::size_t>(g.width))
      throw Error("schema", "scene row length does not match width");
    for (char ch : line) {
      if (ch != '0' && ch != '1') throw Error("schema", "scene rows must contain only '0' and '1'");
      g.blocked.push_back(ch == '1' ? 1 : 0);
    }
  }
  if (!scene_well_formed(g)) throw Error("schema", "scene border open or free space disconnected");
  return g;
}

inline void save_scene(const std::filesystem::path& path, const OccupancyGrid& g,
                       std::string_view config_hash = {}) {
  io::write_json(path, scene_to_json(g, config_hash));
}

inline OccupancyGrid load_scene(const std::filesystem::path& path) {
  return scene_from_json(io::read_json(path));
}

}  // namespace neonav

#endif  // NEONAV_GRIDWORLD_HPP
