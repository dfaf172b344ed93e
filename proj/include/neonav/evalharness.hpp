#ifndef NEONAV_EVALHARNESS_HPP
#define NEONAV_EVALHARNESS_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "neonav/expert.hpp"
#include "neonav/gridworld.hpp"
#include "neonav/model.hpp"
#include "neonav/sensor.hpp"

namespace neonav {

struct EvalConfig {
  bool use_stop = false;
  int max_steps = 100;
  GoalSpec goal;
  std::vector<std::uint64_t> seeds = {0};

  void validate() const {
    if (max_steps < 0) throw Error("config", "max_steps must be nonnegative");
    if (!(goal.radius_m > 0.0)) throw Error("config", "goal radius must be positive");
    if (seeds.empty()) throw Error("config", "at least one evaluation seed is required");
  }
};

using ActionProbs = std::array<double, kActionCount>;

/// What a policy sees at each step. The grid, pose and task are there for
/// privileged baselines (the expert); learned policies use only x, goal
/// and prev_action.
struct PolicyInput {
  const Observation& x;
  const DepthScan& goal;
  const OneHot& prev_action;
  const OccupancyGrid& grid;
  const Pose& pose;
  const Task& task;
  int step;
};

class Policy {
 public:
  virtual ~Policy() = default;
  /// Called before each episode with a seed derived from (eval seed, episode).
  virtual void reset(std::uint64_t /*episode_seed*/) {}
  virtual ActionProbs probabilities(const PolicyInput& in) = 0;
};

/// Builds one policy instance per worker thread.
using PolicyFactory = std::function<std::unique_ptr<Policy>()>;

enum class Termination { StopIssued, GoalEntered, StepLimit };

inline std::string_view termination_name(Termination t) noexcept {
  switch (t) {
    case Termination::StopIssued: return "stop_issued";
    case Termination::GoalEntered: return "goal_entered";
    case Termination::StepLimit: return "step_limit";
  }
  return "?";
}

struct EpisodeResult {
  bool success = false;
  int steps = 0;
  double path_len_m = 0.0;      // P_i, translations only
  double shortest_len_m = 0.0;  // L_i
  int collisions = 0;           // fallbacks triggered by a predicted collision
  Termination termination = Termination::StepLimit;
  int first_success_step = -1;  // step index after which the goal predicate first held
  std::vector<Pose> trajectory;  // visited poses, start included
  std::vector<Action> actions;   // executed actions
};

/// Executed action given the policy's distribution: highest probability
/// first, ties broken by action order; any translation that would collide is
/// skipped (counted as a collision), Stop is skipped when stop-less.
/// Rotations never collide, so the cascade always finds an action.
inline std::pair<Action, int> select_action(const OccupancyGrid& grid, const Pose& pose, const ActionProbs& probs,
                                            bool use_stop, int azimuths) {
  std::array<int, kActionCount> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  int collisions = 0;
  for (int idx : order) {
    const Action a = static_cast<Action>(idx);
    if (a == Action::Stop) {
      if (use_stop) return {a, collisions};
      continue;
    }
    if (step(grid, pose, a, azimuths).collided) {
      ++collisions;
      continue;
    }
    return {a, collisions};
  }
  return {Action::RotateCcw, collisions};  // unreachable: rotations never collide
}

inline EpisodeResult run_episode(Policy& policy, const OccupancyGrid& grid, const Task& task, const EvalConfig& cfg,
                                 const SensorConfig& sensor, std::uint64_t episode_seed = 0,
                                 const ViewCache* cache = nullptr) {
  const int k = sensor.azimuths;
  policy.reset(episode_seed);
  EpisodeResult res;
  res.shortest_len_m = task.shortest_len_m;
  Pose pose = task.start;
  res.trajectory.push_back(pose);
  OneHot prev{};
  const DepthScan goal_view = cache ? cache->view(task.goal) : render_view(grid, task.goal, sensor);
  if (!cfg.use_stop && in_goal_region(grid, pose, task.goal, cfg.goal, k)) {
    res.success = true;
    res.first_success_step = 0;
    res.termination = Termination::GoalEntered;
    return res;
  }
  for (int t = 0; t < cfg.max_steps; ++t) {
    const Observation x = cache ? cache->observe(pose) : observe(grid, pose, sensor);
    const ActionProbs probs = policy.probabilities({x, goal_view, prev, grid, pose, task, t});
    const auto [action, collisions] = select_action(grid, pose, probs, cfg.use_stop, k);
    res.collisions += collisions;
    res.actions.push_back(action);
    ++res.steps;
    if (action == Action::Stop) {
      res.termination = Termination::StopIssued;
      res.success = in_goal_region(grid, pose, task.goal, cfg.goal, k);
      if (res.success) res.first_success_step = res.steps;
      return res;
    }
    const auto out = step(grid, pose, action, k);
    if (is_translation(action)) res.path_len_m += grid.cell_size_m;
    pose = out.next_pose;
    res.trajectory.push_back(pose);
    prev = one_hot(action);
    if (!cfg.use_stop && in_goal_region(grid, pose, task.goal, cfg.goal, k)) {
      res.success = true;
      res.first_success_step = res.steps;
      res.termination = Termination::GoalEntered;
      return res;
    }
  }
  res.termination = Termination::StepLimit;
  return res;
}

/// (1/N) sum S_i L_i / max(P_i, L_i).
inline double spl(std::span<const EpisodeResult> results) {
  if (results.empty()) throw Error("range", "SPL of an empty result set is undefined");
  double sum = 0.0;
  for (const auto& r : results) {
    if (!r.success) continue;
    if (!(r.shortest_len_m > 0.0)) throw Error("range", "SPL requires positive shortest path lengths");
    sum += r.shortest_len_m / std::max(r.path_len_m, r.shortest_len_m);
  }
  return sum / static_cast<double>(results.size());
}

inline double success_rate(std::span<const EpisodeResult> results) {
  if (results.empty()) return 0.0;
  const auto n = std::count_if(results.begin(), results.end(), [](const EpisodeResult& r) { return r.success; });
  return static_cast<double>(n) / static_cast<double>(results.size());
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Uniform random actions. Each allowed action gets an independent uniform
/// score, so the argmax is uniform and the collision fallback order is a
/// random permutation. Stop gets score 0 when stop-less.
class RandomWalkPolicy final : public Policy {
 public:
  explicit RandomWalkPolicy(std::uint64_t seed, bool use_stop) : seed_(seed), use_stop_(use_stop), rng_(seed) {}

  void reset(std::uint64_t episode_seed) override { rng_ = CounterRng(seed_, episode_seed); }

  ActionProbs probabilities(const PolicyInput&) override { return draw(); }

  ActionProbs draw() {
    ActionProbs p{};
    double total = 0.0;
    for (int i = 0; i < kActionCount; ++i) {
      if (!use_stop_ && i == action_index(Action::Stop)) continue;
      p[static_cast<std::size_t>(i)] = rng_.uniform() + 0x1.0p-60;
      total += p[static_cast<std::size_t>(i)];
    }
    for (auto& v : p) v /= total;
    return p;
  }

 private:
  std::uint64_t seed_;
  bool use_stop_;
  CounterRng rng_;
};

inline PolicyFactory random_walk_policy(std::uint64_t seed, bool use_stop) {
  return [seed, use_stop] { return std::make_unique<RandomWalkPolicy>(seed, use_stop); };
}

/// Open-loop replay of the shortest-path expert for the episode's task.
class ExpertPolicy final : public Policy {
 public:
  explicit ExpertPolicy(GoalSpec goal, int azimuths) : goal_(goal), k_(azimuths) {}

  ActionProbs probabilities(const PolicyInput& in) override {
    if (in.step == 0) {
      const auto path = shortest_path(in.grid, in.task.start, in.task.goal, goal_, k_);
      if (!path) throw Error("no_path", "expert cannot solve task");
      plan_ = *path;
    }
    const auto i = std::min(static_cast<std::size_t>(in.step), plan_.size() - 1);
    ActionProbs p{};
    p[static_cast<std::size_t>(action_index(plan_[i]))] = 1.0;
    return p;
  }

 private:
  GoalSpec goal_;
  int k_;
  std::vector<Action> plan_;
};

inline PolicyFactory expert_policy(GoalSpec goal, int azimuths) {
  return [goal, azimuths] { return std::make_unique<ExpertPolicy>(goal, azimuths); };
}

/// Learned policy over a shared read-only parameter snapshot.
class ModelPolicy final : public Policy {
 public:
  explicit ModelPolicy(std::shared_ptr<const NeoNavParams> params, std::uint64_t seed = 0)
      : params_(std::move(params)), seed_(seed), rng_(seed) {}

  void reset(std::uint64_t episode_seed) override { rng_ = CounterRng(seed_, episode_seed); }

  ActionProbs probabilities(const PolicyInput& in) override {
    return act(*params_, in.x, in.goal, in.prev_action, &rng_);
  }

 private:
  std::shared_ptr<const NeoNavParams> params_;
  std::uint64_t seed_;
  CounterRng rng_;
};

inline PolicyFactory model_policy(std::shared_ptr<const NeoNavParams> params, std::uint64_t seed = 0) {
  return [params = std::move(params), seed] { return std::make_unique<ModelPolicy>(params, seed); };
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

struct SeedMetrics {
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  double success_rate = 0.0;
  double spl = 0.0;
  friend bool operator==(const SeedMetrics&, const SeedMetrics&) = default;
};

struct MetricsReport {
  std::size_t episodes = 0;
  double success_rate = 0.0;
  double spl = 0.0;
  std::vector<SeedMetrics> per_seed;
  std::vector<EpisodeResult> results;  // seed-major, then task order

  friend bool operator==(const MetricsReport& a, const MetricsReport& b) {
    return a.episodes == b.episodes && a.success_rate == b.success_rate && a.spl == b.spl && a.per_seed == b.per_seed;
  }
};

/// Episode seed for (evaluation seed, task index).
inline std::uint64_t episode_seed(std::uint64_t eval_seed, std::size_t task_index) {
  return splitmix64_mix(eval_seed * 0x9E3779B97F4A7C15ULL + task_index);
}

/// Runs every task once per evaluation seed. Episodes are spread over
/// `workers` threads; each result lands at a fixed index, so the report
/// does not depend on the worker count.
inline MetricsReport evaluate(const PolicyFactory& make_policy, std::span<const OccupancyGrid> scenes,
                              std::span<const Task> tasks, const EvalConfig& cfg, const SensorConfig& sensor,
                              unsigned workers = 1) {
  cfg.validate();
  std::vector<ViewCache> caches;
  caches.reserve(scenes.size());
  for (const auto& s : scenes) caches.emplace_back(s, sensor);

  const std::size_t per_seed = tasks.size();
  const std::size_t total = per_seed * cfg.seeds.size();
  std::vector<EpisodeResult> results(total);
  auto run_range = [&](std::size_t worker, std::size_t stride) {
    auto policy = make_policy();
    for (std::size_t e = worker; e < total; e += stride) {
      const std::size_t si = e / per_seed, ti = e % per_seed;
      const Task& task = tasks[ti];
      if (task.scene_id >= scenes.size()) throw Error("schema", "task references unknown scene");
      results[e] = run_episode(*policy, scenes[task.scene_id], task, cfg, sensor, episode_seed(cfg.seeds[si], ti),
                               &caches[task.scene_id]);
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1 || total < 2) {
    run_range(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          run_range(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  MetricsReport report;
  report.episodes = total;
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    std::span<const EpisodeResult> slice(results.data() + si * per_seed, per_seed);
    report.per_seed.push_back({cfg.seeds[si], per_seed, success_rate(slice), per_seed ? spl(slice) : 0.0});
  }
  report.success_rate = success_rate(results);
  report.spl = total ? spl(results) : 0.0;
  report.results = std::move(results);
  return report;
}

struct SweepPoint {
  double x = 0.0;  // step budget or radius in meters
  double success_rate = 0.0;
};

/// Success rate for each step budget; each budget reruns the same episodes
/// with the same seeds.
inline std::vector<SweepPoint> sweep_steps(const PolicyFactory& policy, std::span<const OccupancyGrid> scenes,
                                           std::span<const Task> tasks, EvalConfig cfg, const SensorConfig& sensor,
                                           std::span<const int> budgets, unsigned workers = 1) {
  if (!std::is_sorted(budgets.begin(), budgets.end())) throw Error("config", "step budgets must be ascending");
  std::vector<SweepPoint> curve;
  for (int b : budgets) {
    cfg.max_steps = b;
    curve.push_back({static_cast<double>(b), evaluate(policy, scenes, tasks, cfg, sensor, workers).success_rate});
  }
  return curve;
}

/// Success rate for each goal radius (meters), same seeds throughout.
inline std::vector<SweepPoint> sweep_threshold(const PolicyFactory& policy, std::span<const OccupancyGrid> scenes,
                                               std::span<const Task> tasks, EvalConfig cfg,
                                               const SensorConfig& sensor, std::span<const double> radii,
                                               unsigned workers = 1) {
  if (!std::is_sorted(radii.begin(), radii.end())) throw Error("config", "radii must be ascending");
  std::vector<SweepPoint> curve;
  for (double r : radii) {
    cfg.goal.radius_m = r;
    curve.push_back({r, evaluate(policy, scenes, tasks, cfg, sensor, workers).success_rate});
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline constexpr int kMetricsFormatVersion = 1;

inline Json metrics_to_json(const MetricsReport& r, const std::string& config_hash, const std::string& policy) {
  Json seeds = Json::array();
  for (const auto& s : r.per_seed)
    seeds.push_back({{"seed", s.seed}, {"episodes", s.episodes}, {"success_rate", s.success_rate}, {"spl", s.spl}});
  return {{"version", kMetricsFormatVersion},
          {"config_hash", config_hash},
          {"policy", policy},
          {"episodes", r.episodes},
          {"success_rate", r.success_rate},
          {"spl", r.spl},
          {"per_seed", std::move(seeds)}};
}

inline std::string metrics_to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "seed,episodes,success_rate,spl\n";
  for (const auto& s : r.per_seed) os << s.seed << ',' << s.episodes << ',' << s.success_rate << ',' << s.spl << '\n';
  os << "all," << r.episodes << ',' << r.success_rate << ',' << r.spl << '\n';
  return os.str();
}

/// One JSON line per episode: task, outcome, and the visited poses.
inline std::string episodes_to_jsonl(const MetricsReport& r, std::span<const Task> tasks) {
  std::string out;
  const std::size_t per_seed = tasks.size();
  for (std::size_t e = 0; e < r.results.size(); ++e) {
    const auto& res = r.results[e];
    const auto& task = tasks[e % per_seed];
    Json path = Json::array();
    for (const auto& p : res.trajectory) path.push_back({p.row, p.col, p.azimuth});
    Json actions = Json::array();
    for (Action a : res.actions) actions.push_back(action_name(a));
    Json line = {{"episode", e},
                 {"seed", r.per_seed[e / per_seed].seed},
                 {"scene", task.scene_id},
                 {"start", {task.start.row, task.start.col, task.start.azimuth}},
                 {"goal", {task.goal.row, task.goal.col, task.goal.azimuth}},
                 {"success", res.success},
                 {"termination", termination_name(res.termination)},
                 {"steps", res.steps},
                 {"path_len_m", res.path_len_m},
                 {"shortest_len_m", res.shortest_len_m},
                 {"collisions", res.collisions},
                 {"trajectory", std::move(path)},
                 {"actions", std::move(actions)}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

}  // namespace neonav

#endif  // NEONAV_EVALHARNESS_HPP
