#ifndef NEONAV_EXPERT_HPP
#define NEONAV_EXPERT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neonav/gridworld.hpp"
#include "neonav/io.hpp"
#include "neonav/rng.hpp"
#include "neonav/sensor.hpp"

namespace neonav {

/// Goal predicate: Euclidean distance strictly below radius_m and heading
/// gap strictly below angle_deg, with the gap measured as
/// |azimuth index difference| * 360 / K.
struct GoalSpec {
  double radius_m = 1.0;
  double angle_deg = 90.0;
};

inline bool in_goal_region(const OccupancyGrid& grid, const Pose& pose, const Pose& goal, const GoalSpec& spec,
                           int azimuths = kDefaultAzimuths) noexcept {
  const double angle = azimuth_gap(pose.azimuth, goal.azimuth, azimuths) * 360.0 / azimuths;
  return euclidean_distance_m(grid, pose, goal) < spec.radius_m && angle < spec.angle_deg;
}

// ---------------------------------------------------------------------------
// Pose graph search
// ---------------------------------------------------------------------------

/// Pose graph over (cell, azimuth) with unit cost per motion action.
class PoseGraph {
 public:
  PoseGraph(const OccupancyGrid& grid, int azimuths) : grid_(&grid), k_(azimuths) {
    const std::size_t n = state_count();
    pred_offsets_.assign(n + 1, 0);
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // (to, from)
    for (int r = 0; r < grid.height; ++r) {
      for (int c = 0; c < grid.width; ++c) {
        if (grid.is_blocked(r, c)) continue;
        for (int a = 0; a < k_; ++a) {
          const Pose p{r, c, a};
          for (Action act : kAllActions) {
            if (act == Action::Stop) continue;
            const auto out = step(grid, p, act, k_);
            if (out.collided) continue;
            edges.emplace_back(state(out.next_pose), state(p));
          }
        }
      }
    }
    for (const auto& e : edges) ++pred_offsets_[e.first + 1];
    for (std::size_t i = 0; i < n; ++i) pred_offsets_[i + 1] += pred_offsets_[i];
    preds_.resize(edges.size());
    auto fill = pred_offsets_;
    for (const auto& e : edges) preds_[fill[e.first]++] = e.second;
  }

  [[nodiscard]] std::size_t state_count() const noexcept {
    return grid_->blocked.size() * static_cast<std::size_t>(k_);
  }
  [[nodiscard]] std::size_t state(const Pose& p) const noexcept {
    return grid_->index(p.row, p.col) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(p.azimuth);
  }
  [[nodiscard]] Pose pose(std::size_t s) const noexcept {
    const auto cell = s / static_cast<std::size_t>(k_);
    return {static_cast<int>(cell / static_cast<std::size_t>(grid_->width)),
            static_cast<int>(cell % static_cast<std::size_t>(grid_->width)),
            static_cast<int>(s % static_cast<std::size_t>(k_))};
  }
  [[nodiscard]] int azimuths() const noexcept { return k_; }
  [[nodiscard]] const OccupancyGrid& grid() const noexcept { return *grid_; }

  /// Minimum number of motion actions from every state into the goal region
  /// (-1 where unreachable), by BFS over reversed edges.
  [[nodiscard]] std::vector<int> distance_to_region(const Pose& goal, const GoalSpec& spec) const {
    std::vector<int> dist(state_count(), -1);
    std::deque<std::size_t> queue;
    for (int r = 0; r < grid_->height; ++r)
      for (int c = 0; c < grid_->width; ++c) {
        if (grid_->is_blocked(r, c)) continue;
        for (int a = 0; a < k_; ++a) {
          const Pose p{r, c, a};
          if (in_goal_region(*grid_, p, goal, spec, k_)) {
            dist[state(p)] = 0;
            queue.push_back(state(p));
          }
        }
      }
    while (!queue.empty()) {
      const auto s = queue.front();
      queue.pop_front();
      for (auto i = pred_offsets_[s]; i < pred_offsets_[s + 1]; ++i) {
        const auto from = preds_[i];
        if (dist[from] < 0) {
          dist[from] = dist[s] + 1;
          queue.push_back(from);
        }
      }
    }
    return dist;
  }

  /// Lexicographically smallest (by action order) shortest action sequence
  /// into the region, followed by Stop.
  [[nodiscard]] std::optional<std::vector<Action>> shortest_path(const Pose& start, const Pose& goal,
                                                                 const GoalSpec& spec) const {
    const auto dist = distance_to_region(goal, spec);
    return follow(dist, start);
  }

  [[nodiscard]] std::optional<std::vector<Action>> follow(const std::vector<int>& dist, Pose cur) const {
    if (!pose_valid(*grid_, cur, k_) || dist[state(cur)] < 0) return std::nullopt;
    std::vector<Action> plan;
    while (dist[state(cur)] > 0) {
      const int here = dist[state(cur)];
      bool advanced = false;
      for (Action act : kAllActions) {
        if (act == Action::Stop) continue;
        const auto out = step(*grid_, cur, act, k_);
        if (!out.collided && dist[state(out.next_pose)] == here - 1) {
          plan.push_back(act);
          cur = out.next_pose;
          advanced = true;
          break;
        }
      }
      if (!advanced) return std::nullopt;
    }
    plan.push_back(Action::Stop);
    return plan;
  }

 private:
  const OccupancyGrid* grid_;
  int k_;
  std::vector<std::size_t> pred_offsets_;
  std::vector<std::size_t> preds_;
};

inline std::optional<std::vector<Action>> shortest_path(const OccupancyGrid& grid, const Pose& start,
                                                        const Pose& goal, const GoalSpec& spec = {},
                                                        int azimuths = kDefaultAzimuths) {
  return PoseGraph(grid, azimuths).shortest_path(start, goal, spec);
}

/// Number of 4-connected cell moves between two cells, -1 when disconnected.
inline int cell_distance(const OccupancyGrid& grid, int r0, int c0, int r1, int c1) {
  if (grid.is_blocked(r0, c0) || grid.is_blocked(r1, c1)) return -1;
  std::vector<int> dist(grid.blocked.size(), -1);
  std::deque<std::pair<int, int>> queue;
  dist[grid.index(r0, c0)] = 0;
  queue.emplace_back(r0, c0);
  constexpr std::array<std::pair<int, int>, 4> kNbr = {{{-1, 0}, {0, -1}, {1, 0}, {0, 1}}};
  while (!queue.empty()) {
    auto [r, c] = queue.front();
    queue.pop_front();
    if (r == r1 && c == c1) return dist[grid.index(r, c)];
    for (auto [dr, dc] : kNbr) {
      const int nr = r + dr, nc = c + dc;
      if (grid.is_free(nr, nc) && dist[grid.index(nr, nc)] < 0) {
        dist[grid.index(nr, nc)] = dist[grid.index(r, c)] + 1;
        queue.emplace_back(nr, nc);
      }
    }
  }
  return -1;
}

/// Translation count of a shortest pose-to-pose path, in meters. Strafing
/// makes every 4-neighbour reachable without rotating, so this is the cell
/// BFS distance; rotations contribute nothing.
inline std::optional<double> geodesic_m(const OccupancyGrid& grid, const Pose& a, const Pose& b) {
  const int d = cell_distance(grid, a.row, a.col, b.row, b.col);
  if (d < 0) return std::nullopt;
  return d * grid.cell_size_m;
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct Task {
  std::size_t scene_id = 0;
  Pose start;
  Pose goal;
  double shortest_len_m = 0.0;
  double euclid_m = 0.0;
  double ratio = 1.0;
  friend bool operator==(const Task&, const Task&) = default;
};

struct TaskSampling {
  double ratio_lo = 1.0;
  double ratio_hi = 1.1;
  double band_fraction = 0.15;
  GoalSpec goal;
  int azimuths = kDefaultAzimuths;
  std::size_t max_attempts_per_task = 20000;
};

namespace detail {

inline Pose random_free_pose(const std::vector<std::pair<int, int>>& cells, int azimuths, CounterRng& rng) {
  const auto& [r, c] = cells[rng.below(cells.size())];
  return {r, c, static_cast<int>(rng.below(static_cast<std::uint64_t>(azimuths)))};
}

/// Fill geodesic/euclid/ratio; nullopt when the pair is not a valid task.
inline std::optional<Task> make_task(const OccupancyGrid& grid, std::size_t scene_id, const Pose& start,
                                     const Pose& goal, const TaskSampling& opts) {
  if (start.row == goal.row && start.col == goal.col) return std::nullopt;
  if (in_goal_region(grid, start, goal, opts.goal, opts.azimuths)) return std::nullopt;
  const auto geo = geodesic_m(grid, start, goal);
  if (!geo) return std::nullopt;
  Task t;
  t.scene_id = scene_id;
  t.start = start;
  t.goal = goal;
  t.shortest_len_m = *geo;
  t.euclid_m = euclidean_distance_m(grid, start, goal);
  t.ratio = t.shortest_len_m / t.euclid_m;
  return t;
}

}  // namespace detail

inline bool ratio_in_band(const Task& t, const TaskSampling& opts) noexcept {
  constexpr double kSlack = 1e-12;
  return t.ratio >= opts.ratio_lo - kSlack && t.ratio <= opts.ratio_hi + kSlack;
}

/// Evaluation tasks by rejection sampling. At least
/// ceil(band_fraction * n) tasks have a path/Euclidean ratio inside the
/// band; once the remaining slots equal the missing quota, only in-band
/// draws are accepted. Start and goal lie on distinct cells, the start is
/// outside the goal region and the goal is reachable.
inline std::vector<Task> sample_tasks(std::span<const OccupancyGrid> scenes, std::size_t n, std::uint64_t seed,
                                      const TaskSampling& opts = {}) {
  if (n == 0) throw Error("config", "task count must be at least 1");
  if (scenes.empty()) throw Error("config", "no scenes to sample tasks from");
  std::vector<std::vector<std::pair<int, int>>> cells;
  for (const auto& s : scenes) cells.push_back(s.free_cells());

  const auto required = static_cast<std::size_t>(std::ceil(opts.band_fraction * static_cast<double>(n) - 1e-9));
  std::size_t in_band = 0;
  CounterRng rng(seed, 0x7461736BULL);
  std::vector<Task> tasks;
  tasks.reserve(n);
  while (tasks.size() < n) {
    const bool need_band = in_band < required && n - tasks.size() <= required - in_band;
    std::optional<Task> accepted;
    for (std::size_t attempt = 0; attempt < opts.max_attempts_per_task && !accepted; ++attempt) {
      const auto sid = static_cast<std::size_t>(rng.below(scenes.size()));
      if (cells[sid].size() < 2) continue;
      const Pose start = detail::random_free_pose(cells[sid], opts.azimuths, rng);
      const Pose goal = detail::random_free_pose(cells[sid], opts.azimuths, rng);
      auto task = detail::make_task(scenes[sid], sid, start, goal, opts);
      if (!task) continue;
      if (need_band && !ratio_in_band(*task, opts)) continue;
      accepted = std::move(task);
    }
    if (!accepted) {
      throw Error("sampling", "task quota unreachable: " + std::to_string(tasks.size()) + "/" +
                                  std::to_string(n) + " tasks, " + std::to_string(in_band) + "/" +
                                  std::to_string(required) + " in ratio band after " +
                                  std::to_string(opts.max_attempts_per_task) + " draws");
    }
    if (ratio_in_band(*accepted, opts)) ++in_band;
    tasks.push_back(std::move(*accepted));
  }
  return tasks;
}

/// Training tasks: per scene, `targets_per_scene` goal poses, each paired
/// with `starts_per_target` random valid starts.
inline std::vector<Task> sample_training_tasks(std::span<const OccupancyGrid> scenes, std::size_t targets_per_scene,
                                               std::size_t starts_per_target, std::uint64_t seed,
                                               const TaskSampling& opts = {}) {
  std::vector<Task> tasks;
  for (std::size_t sid = 0; sid < scenes.size(); ++sid) {
    const auto cells = scenes[sid].free_cells();
    if (cells.size() < 2) continue;
    CounterRng rng = CounterRng(seed, 0x7472616EULL).split(sid);
    for (std::size_t t = 0; t < targets_per_scene; ++t) {
      const Pose goal = detail::random_free_pose(cells, opts.azimuths, rng);
      std::size_t made = 0;
      for (std::size_t attempt = 0; made < starts_per_target && attempt < opts.max_attempts_per_task; ++attempt) {
        const Pose start = detail::random_free_pose(cells, opts.azimuths, rng);
        if (auto task = detail::make_task(scenes[sid], sid, start, goal, opts)) {
          tasks.push_back(*task);
          ++made;
        }
      }
    }
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// One supervised step along an expert trajectory.
struct Sample {
  Observation x;
  DepthScan g;
  std::optional<Action> prev_action;  // none at t = 0
  Action gt_action = Action::Stop;
  DepthScan next_front;

  std::uint32_t scene_id = 0;
  Pose pose;
  Pose goal;

  /// Previous action as a width-7 vector; all zeros at t = 0.
  [[nodiscard]] OneHot prev_one_hot() const noexcept {
    return prev_action ? one_hot(*prev_action) : OneHot{};
  }
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetManifest {
  std::vector<std::uint64_t> scene_ids;  // scene seeds, indexed by Sample::scene_id
  std::string config_hash;
  std::size_t task_count = 0;
  int azimuths = kDefaultAzimuths;
  int rays = 32;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct Dataset {
  std::vector<Sample> samples;
  DatasetManifest manifest;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetOptions {
  SensorConfig sensor;
  GoalSpec goal;
  std::string config_hash;
};

/// Expert trajectory of one task, converted into samples (one per action,
/// terminal Stop included).
inline std::vector<Sample> expert_samples(const PoseGraph& graph, const ViewCache& views, const Task& task,
                                          const GoalSpec& goal) {
  const auto plan = graph.shortest_path(task.start, task.goal, goal);
  if (!plan) throw Error("no_path", "task has no path to its goal region");
  const int k = graph.azimuths();
  std::vector<Sample> out;
  out.reserve(plan->size());
  Pose cur = task.start;
  std::optional<Action> prev;
  const DepthScan& target = views.view(task.goal);
  for (Action act : *plan) {
    Sample s;
    s.x = views.observe(cur);
    s.g = target;
    s.prev_action = prev;
    s.gt_action = act;
    const auto next = step(graph.grid(), cur, act, k);
    s.next_front = views.view(next.next_pose);
    s.scene_id = static_cast<std::uint32_t>(task.scene_id);
    s.pose = cur;
    s.goal = task.goal;
    out.push_back(std::move(s));
    prev = act;
    cur = next.next_pose;
  }
  return out;
}

inline Dataset build_dataset(std::span<const OccupancyGrid> scenes, std::span<const Task> tasks,
                             const DatasetOptions& opts = {}) {
  Dataset ds;
  for (const auto& s : scenes) ds.manifest.scene_ids.push_back(s.seed);
  ds.manifest.config_hash = opts.config_hash;
  ds.manifest.task_count = tasks.size();
  ds.manifest.azimuths = opts.sensor.azimuths;
  ds.manifest.rays = opts.sensor.rays;

  std::vector<std::optional<PoseGraph>> graphs(scenes.size());
  std::vector<std::optional<ViewCache>> caches(scenes.size());
  for (const auto& task : tasks) {
    if (task.scene_id >= scenes.size()) throw Error("schema", "task references unknown scene");
    auto& graph = graphs[task.scene_id];
    auto& cache = caches[task.scene_id];
    if (!graph) graph.emplace(scenes[task.scene_id], opts.sensor.azimuths);
    if (!cache) cache.emplace(scenes[task.scene_id], opts.sensor);
    auto samples = expert_samples(*graph, *cache, task, opts.goal);
    std::move(samples.begin(), samples.end(), std::back_inserter(ds.samples));
  }
  return ds;
}

/// Replays the sample's action in the simulator and compares the rendered
/// front view with the stored next_front, bit for bit.
inline bool sample_consistent(const OccupancyGrid& grid, const Sample& s, const SensorConfig& cfg) {
  const auto out = step(grid, s.pose, s.gt_action, cfg.azimuths);
  if (out.collided) return false;
  if (s.gt_action == Action::Stop && !(s.next_front == s.x.views.front())) return false;
  return render_view(grid, out.next_pose, cfg) == s.next_front && observe(grid, s.pose, cfg).views == s.x.views;
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr std::uint8_t kNoAction = 255;

inline Json manifest_to_json(const DatasetManifest& m, std::size_t sample_count) {
  return {{"version", kDatasetFormatVersion},
          {"config_hash", m.config_hash},
          {"scene_ids", m.scene_ids},
          {"sample_count", sample_count},
          {"task_count", m.task_count},
          {"azimuths", m.azimuths},
          {"rays", m.rays}};
}

/// Binary layout: "NNDS", u32 version, u32 K, u32 W, u64 count, then per
/// sample a u32 payload length followed by the payload: u32 scene index,
/// 6 x i32 (pose row/col/azimuth, goal row/col/azimuth), u8 previous action
/// (255 = none), u8 expert action, then f32 values for the K views, the
/// goal view and the next front view. All little-endian.
inline std::string encode_dataset(const Dataset& ds) {
  const auto k = static_cast<std::size_t>(ds.manifest.azimuths);
  const auto w = static_cast<std::size_t>(ds.manifest.rays);
  std::string out = "NNDS";
  io::put_le<std::uint32_t>(out, kDatasetFormatVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(k));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  io::put_le<std::uint64_t>(out, ds.samples.size());
  std::string rec;
  for (const auto& s : ds.samples) {
    if (s.x.views.size() != k || s.g.values.size() != w || s.next_front.values.size() != w)
      throw Error("schema", "sample shape does not match manifest");
    rec.clear();
    io::put_le<std::uint32_t>(rec, s.scene_id);
    for (int v : {s.pose.row, s.pose.col, s.pose.azimuth, s.goal.row, s.goal.col, s.goal.azimuth})
      io::put_le<std::int32_t>(rec, v);
    io::put_le<std::uint8_t>(rec, s.prev_action ? static_cast<std::uint8_t>(*s.prev_action) : kNoAction);
    io::put_le<std::uint8_t>(rec, static_cast<std::uint8_t>(s.gt_action));
    auto put_scan = [&](const DepthScan& scan) {
      if (scan.values.size() != w) throw Error("schema", "scan width does not match manifest");
      for (double v : scan.values) io::put_le<float>(rec, static_cast<float>(v));
    };
    for (const auto& v : s.x.views) put_scan(v);
    put_scan(s.g);
    put_scan(s.next_front);
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rec.size()));
    out += rec;
  }
  return out;
}

inline std::vector<Sample> decode_dataset(std::string_view bytes, int& azimuths, int& rays) {
  io::Reader in(bytes);
  if (in.take(4) != "NNDS") throw Error("schema", "not a dataset file");
  if (in.get<std::uint32_t>() != kDatasetFormatVersion) throw Error("schema", "unsupported dataset version");
  const auto k = in.get<std::uint32_t>();
  const auto w = in.get<std::uint32_t>();
  const auto count = in.get<std::uint64_t>();
  azimuths = static_cast<int>(k);
  rays = static_cast<int>(w);
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint32_t>();
    io::Reader rec(in.take(len));
    Sample s;
    s.scene_id = rec.get<std::uint32_t>();
    s.pose = {rec.get<std::int32_t>(), rec.get<std::int32_t>(), rec.get<std::int32_t>()};
    s.goal = {rec.get<std::int32_t>(), rec.get<std::int32_t>(), rec.get<std::int32_t>()};
    const auto prev = rec.get<std::uint8_t>();
    if (prev != kNoAction) s.prev_action = action_from_index(prev);
    s.gt_action = action_from_index(rec.get<std::uint8_t>());
    auto get_scan = [&] {
      DepthScan scan;
      scan.values.resize(w);
      for (auto& v : scan.values) v = static_cast<double>(rec.get<float>());
      return scan;
    };
    for (std::uint32_t v = 0; v < k; ++v) s.x.views.push_back(get_scan());
    s.x.pose_of_record = s.pose;
    s.g = get_scan();
    s.next_front = get_scan();
    if (!rec.done()) throw Error("schema", "dataset record has trailing bytes");
    samples.push_back(std::move(s));
  }
  if (!in.done()) throw Error("schema", "dataset file has trailing bytes");
  return samples;
}

/// Writes `<stem>.bin` plus the `<stem>.json` sidecar manifest.
inline void save_dataset(const std::filesystem::path& bin_path, const Dataset& ds) {
  io::write_file(bin_path, encode_dataset(ds));
  auto sidecar = bin_path;
  sidecar.replace_extension(".json");
  io::write_json(sidecar, manifest_to_json(ds.manifest, ds.samples.size()));
}

inline Dataset load_dataset(const std::filesystem::path& bin_path) {
  auto sidecar = bin_path;
  sidecar.replace_extension(".json");
  const Json doc = io::read_json(sidecar);
  if (io::field<std::uint32_t>(doc, "version") != kDatasetFormatVersion)
    throw Error("schema", "unsupported dataset manifest version");
  Dataset ds;
  ds.manifest.config_hash = io::field<std::string>(doc, "config_hash");
  ds.manifest.scene_ids = io::field<std::vector<std::uint64_t>>(doc, "scene_ids");
  ds.manifest.task_count = io::field<std::size_t>(doc, "task_count");
  int k = 0, w = 0;
  ds.samples = decode_dataset(io::read_file(bin_path), k, w);
  ds.manifest.azimuths = k;
  ds.manifest.rays = w;
  if (k != io::field<int>(doc, "azimuths") || w != io::field<int>(doc, "rays") ||
      ds.samples.size() != io::field<std::size_t>(doc, "sample_count"))
    throw Error("schema", "dataset manifest disagrees with binary header");
  for (const auto& s : ds.samples)
    if (s.scene_id >= ds.manifest.scene_ids.size()) throw Error("schema", "sample references unknown scene");
  return ds;
}

inline Json sample_to_json(const Sample& s) {
  Json views = Json::array();
  for (const auto& v : s.x.views) views.push_back(v.values);
  return {{"scene", s.scene_id},
          {"pose", {s.pose.row, s.pose.col, s.pose.azimuth}},
          {"goal", {s.goal.row, s.goal.col, s.goal.azimuth}},
          {"prev_action", s.prev_action ? Json(action_name(*s.prev_action)) : Json(nullptr)},
          {"action", action_name(s.gt_action)},
          {"views", std::move(views)},
          {"target", s.g.values},
          {"next_front", s.next_front.values}};
}

/// Text mirror of the binary file: one JSON object per line.
inline std::string dataset_to_jsonl(const Dataset& ds) {
  std::string out;
  for (const auto& s : ds.samples) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

}  // namespace neonav

#endif  // NEONAV_EXPERT_HPP
