#include <gtest/gtest.h>

#include <cmath>

#include "neonav/evalharness.hpp"
#include "test_util.hpp"

using namespace neonav;

namespace {

EpisodeResult fixture(bool success, double path, double shortest) {
  EpisodeResult r;
  r.success = success;
  r.path_len_m = path;
  r.shortest_len_m = shortest;
  return r;
}

struct World {
  std::vector<OccupancyGrid> scenes;
  std::vector<Task> tasks;
};

World world(std::size_t n_tasks = 30) {
  World w;
  for (std::uint64_t s : {21, 22, 23}) w.scenes.push_back(generate_scene(s, 10, 10, 0.1));
  w.tasks = sample_tasks(w.scenes, n_tasks, 5, TaskSampling{});
  return w;
}

// Fixed preference list; probabilities decrease along the list.
class ScriptedPolicy final : public Policy {
 public:
  explicit ScriptedPolicy(std::vector<Action> prefs) : prefs_(std::move(prefs)) {}
  ActionProbs probabilities(const PolicyInput&) override {
    ActionProbs p{};
    double w = 1.0;
    for (Action a : prefs_) p[static_cast<std::size_t>(action_index(a))] = (w /= 2.0);
    return p;
  }

 private:
  std::vector<Action> prefs_;
};

}  // namespace

TEST(Spl, Fixtures) {
  const std::vector<EpisodeResult> one{fixture(true, 2.0, 2.0)};
  const std::vector<EpisodeResult> zero{fixture(false, 1.0, 2.0)};
  const std::vector<EpisodeResult> half{fixture(true, 4.0, 2.0)};
  EXPECT_DOUBLE_EQ(spl(one), 1.0);
  EXPECT_DOUBLE_EQ(spl(zero), 0.0);
  EXPECT_DOUBLE_EQ(spl(half), 0.5);
  const std::vector<EpisodeResult> mixed{one[0], zero[0], half[0]};
  EXPECT_DOUBLE_EQ(spl(mixed), 0.5);
  EXPECT_DOUBLE_EQ(success_rate(mixed), 2.0 / 3.0);
  // shorter than the shortest path counts as the shortest path
  const std::vector<EpisodeResult> short_path{fixture(true, 1.0, 2.0)};
  EXPECT_DOUBLE_EQ(spl(short_path), 1.0);
  EXPECT_THROW(static_cast<void>(spl(std::span<const EpisodeResult>{})), Error);
}

TEST(Eval, ExpertReplayIsOptimal) {
  const auto w = world();
  for (bool use_stop : {true, false}) {
    EvalConfig cfg;
    cfg.use_stop = use_stop;
    const auto r = evaluate(expert_policy(cfg.goal, 4), w.scenes, w.tasks, cfg, SensorConfig{});
    EXPECT_EQ(r.success_rate, 1.0);
    EXPECT_DOUBLE_EQ(r.spl, 1.0);
    for (std::size_t i = 0; i < r.results.size(); ++i) {
      EXPECT_LE(r.results[i].path_len_m, w.tasks[i].shortest_len_m + 1e-12);
      EXPECT_EQ(r.results[i].collisions, 0);
      EXPECT_EQ(r.results[i].termination, use_stop ? Termination::StopIssued : Termination::GoalEntered);
    }
  }
}

TEST(Eval, CollisionFallback) {
  const auto g = test::grid_from({"###", "#..", "#.."});
  const Pose p{1, 1, 0};  // facing the wall to the north
  ActionProbs probs{};
  probs[0] = 0.9;  // MoveForward
  probs[1] = 0.05;
  probs[6] = 0.05;
  auto [a, c] = select_action(g, p, probs, false, 4);
  EXPECT_EQ(a, Action::MoveBack);
  EXPECT_EQ(c, 1);
  probs[1] = 0.0;
  std::tie(a, c) = select_action(g, p, probs, true, 4);
  EXPECT_EQ(a, Action::Stop);
  std::tie(a, c) = select_action(g, p, probs, false, 4);
  // zero-probability actions fall back in action order
  EXPECT_EQ(a, Action::MoveBack);
  EXPECT_EQ(c, 1);
}

TEST(Eval, ForwardIntoWallStillMoves) {
  const auto g = test::grid_from({"#####", "#...#", "#...#", "#####"});
  ScriptedPolicy pol({Action::MoveForward, Action::MoveRight, Action::RotateCcw});
  Task t{0, {2, 1, 1}, {1, 1, 1}, 0.5, 0.5, 1.0};  // facing the west wall
  EvalConfig cfg;
  cfg.goal.radius_m = 0.3;
  cfg.max_steps = 10;
  const auto r = run_episode(pol, g, t, cfg, SensorConfig{});
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.collisions, 1);
  EXPECT_EQ(r.actions, std::vector<Action>{Action::MoveRight});
  for (std::size_t i = 0; i + 1 < r.trajectory.size(); ++i) EXPECT_TRUE(pose_valid(g, r.trajectory[i]));
}

TEST(Eval, StopModeIsStrict) {
  const auto g = test::grid_from({"......", "......"});
  Task t{0, {0, 0, 3}, {0, 4, 3}, 2.0, 2.0, 1.0};
  EvalConfig cfg;
  cfg.goal.radius_m = 0.3;
  cfg.use_stop = true;
  cfg.max_steps = 20;
  {
    // walks through the goal but never stops
    ScriptedPolicy pol({Action::MoveForward});
    const auto r = run_episode(pol, g, t, cfg, SensorConfig{});
    EXPECT_FALSE(r.success);
    EXPECT_EQ(r.termination, Termination::StepLimit);
  }
  {
    ScriptedPolicy pol({Action::Stop});
    const auto r = run_episode(pol, g, t, cfg, SensorConfig{});
    EXPECT_FALSE(r.success);
    EXPECT_EQ(r.termination, Termination::StopIssued);
    EXPECT_EQ(r.steps, 1);
  }
  {
    auto pol = expert_policy(cfg.goal, 4)();
    const auto r = run_episode(*pol, g, t, cfg, SensorConfig{});
    EXPECT_TRUE(r.success);
    EXPECT_EQ(r.actions.back(), Action::Stop);
  }
  cfg.use_stop = false;
  ScriptedPolicy pol({Action::MoveForward});
  const auto r = run_episode(pol, g, t, cfg, SensorConfig{});
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.steps, 4);
  EXPECT_EQ(r.termination, Termination::GoalEntered);
}

TEST(Eval, RandomWalkIsUniform) {
  const auto g = test::grid_from({"....."});
  for (bool use_stop : {false, true}) {
    RandomWalkPolicy pol(3, use_stop);
    pol.reset(9);
    const int n = 70000, k = use_stop ? 7 : 6;
    std::array<int, kActionCount> counts{};
    for (int i = 0; i < n; ++i) {
      const auto p = pol.draw();
      counts[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())]++;
    }
    if (!use_stop) {
      EXPECT_EQ(counts[6], 0);
    }
    const double pk = 1.0 / k, sigma = std::sqrt(n * pk * (1 - pk));
    for (int a = 0; a < k; ++a) EXPECT_NEAR(counts[static_cast<std::size_t>(a)], n * pk, 3 * sigma) << a;
  }
}

TEST(Eval, RandomWalkNeverStopsWhenStopless) {
  const auto w = world(20);
  EvalConfig cfg;
  cfg.max_steps = 50;
  const auto r = evaluate(random_walk_policy(1, false), w.scenes, w.tasks, cfg, SensorConfig{});
  for (const auto& e : r.results)
    for (Action a : e.actions) EXPECT_NE(a, Action::Stop);
}

TEST(Eval, RandomSuccessIsNontrivialAndReproducible) {
  const auto w = world(40);
  EvalConfig cfg;
  cfg.seeds = {0, 1};
  const auto a = evaluate(random_walk_policy(4, false), w.scenes, w.tasks, cfg, SensorConfig{});
  const auto b = evaluate(random_walk_policy(4, false), w.scenes, w.tasks, cfg, SensorConfig{});
  EXPECT_GT(a.success_rate, 0.0);
  EXPECT_LT(a.success_rate, 1.0);
  EXPECT_EQ(a.success_rate, b.success_rate);
  EXPECT_EQ(a.spl, b.spl);
  ASSERT_EQ(a.per_seed.size(), 2u);
  EXPECT_EQ(a.results.size(), 80u);
  EXPECT_NE(a.results[0].actions, a.results[40].actions);
}

TEST(Eval, WorkerCountInvariance) {
  const auto w = world(25);
  EvalConfig cfg;
  cfg.seeds = {3, 4};
  const auto one = evaluate(random_walk_policy(2, false), w.scenes, w.tasks, cfg, SensorConfig{}, 1);
  const auto three = evaluate(random_walk_policy(2, false), w.scenes, w.tasks, cfg, SensorConfig{}, 3);
  EXPECT_EQ(one.success_rate, three.success_rate);
  EXPECT_EQ(one.spl, three.spl);
  for (std::size_t i = 0; i < one.results.size(); ++i) {
    EXPECT_EQ(one.results[i].actions, three.results[i].actions);
    EXPECT_EQ(one.results[i].trajectory, three.results[i].trajectory);
  }
  EXPECT_EQ(metrics_to_json(one, "h", "random").dump(), metrics_to_json(three, "h", "random").dump());
}

TEST(Eval, SweepsAreMonotone) {
  const auto w = world(40);
  EvalConfig cfg;
  const std::vector<int> budgets{0, 5, 10, 20, 40, 80};
  const auto steps = sweep_steps(random_walk_policy(6, false), w.scenes, w.tasks, cfg, SensorConfig{}, budgets);
  ASSERT_EQ(steps.size(), budgets.size());
  for (std::size_t i = 1; i < steps.size(); ++i) EXPECT_GE(steps[i].success_rate, steps[i - 1].success_rate);
  EXPECT_GT(steps.back().success_rate, steps.front().success_rate);

  const std::vector<double> radii{0.25, 0.5, 1.0, 1.5, 2.0};
  const auto th = sweep_threshold(random_walk_policy(6, false), w.scenes, w.tasks, cfg, SensorConfig{}, radii);
  for (std::size_t i = 1; i < th.size(); ++i) EXPECT_GE(th[i].success_rate, th[i - 1].success_rate);
  const std::vector<int> unsorted{10, 5};
  EXPECT_THROW(sweep_steps(random_walk_policy(6, false), w.scenes, w.tasks, cfg, SensorConfig{}, unsorted), Error);
}

TEST(Eval, WholeSceneGoalAlwaysSucceeds) {
  const auto w = world(20);
  EvalConfig cfg;
  cfg.goal.radius_m = 10 * std::sqrt(2.0) * w.scenes[0].cell_size_m + 0.01;
  cfg.goal.angle_deg = 181.0;
  const auto r = evaluate(random_walk_policy(1, false), w.scenes, w.tasks, cfg, SensorConfig{});
  EXPECT_EQ(r.success_rate, 1.0);
  for (const auto& e : r.results) EXPECT_EQ(e.steps, 0);
}

TEST(Eval, ModelPolicyRuns) {
  const auto w = world(5);
  ModelConfig mc;
  mc.rays = 32;
  auto m = std::make_shared<const NeoNavParams>(mc, 1);
  EvalConfig cfg;
  cfg.max_steps = 15;
  const auto r = evaluate(model_policy(m, 0), w.scenes, w.tasks, cfg, SensorConfig{});
  EXPECT_EQ(r.results.size(), 5u);
  // uniform output: ties resolve in action order, so the first action is MoveForward unless blocked
  for (std::size_t i = 0; i < r.results.size(); ++i)
    if (!r.results[i].actions.empty() &&
        !step(w.scenes[w.tasks[i].scene_id], w.tasks[i].start, Action::MoveForward, 4).collided) {
      EXPECT_EQ(r.results[i].actions.front(), Action::MoveForward);
    }
}

TEST(Eval, Exports) {
  const auto w = world(4);
  EvalConfig cfg;
  cfg.seeds = {0, 1};
  const auto r = evaluate(random_walk_policy(1, false), w.scenes, w.tasks, cfg, SensorConfig{});
  const auto csv = metrics_to_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const auto jl = episodes_to_jsonl(r, w.tasks);
  EXPECT_EQ(std::count(jl.begin(), jl.end(), '\n'), 8);
  const auto j = metrics_to_json(r, "abc", "random");
  EXPECT_EQ(j["config_hash"], "abc");
  EXPECT_EQ(j["per_seed"].size(), 2u);
}

TEST(Eval, RejectsBadConfig) {
  const auto w = world(2);
  EvalConfig cfg;
  cfg.seeds.clear();
  EXPECT_THROW(evaluate(random_walk_policy(1, false), w.scenes, w.tasks, cfg, SensorConfig{}), Error);
  cfg = {};
  auto tasks = w.tasks;
  tasks[0].scene_id = 99;
  EXPECT_THROW(evaluate(random_walk_policy(1, false), w.scenes, tasks, cfg, SensorConfig{}), Error);
}
