// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance [--only 1,2,...] [--workdir DIR]

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>

#include "dijkstra_oracle.hpp"
#include "neonav/cli.hpp"

using namespace neonav;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr std::size_t kGradCoords = 2000;
constexpr double kGradSeconds = 120.0;
constexpr double kKlRelTol = 0.01;
constexpr std::size_t kKlSamples = 1'000'000;
constexpr int kKlPairs = 20;
constexpr int kKlDim = 16;
constexpr double kOverfitAcc = 0.95;
constexpr double kOverfitMse = 1e-3;
constexpr double kOverfitSeconds = 300.0;
constexpr double kMarginSr = 0.15;
constexpr double kGeneralizationSeconds = 1800.0;
constexpr double kSoftTie = 0.01;
constexpr int kSeeds = 3;

// Scaled navigation protocol shared by criteria 6 to 8.
constexpr const char* kNavConfig = R"(seed = 0
scene.width = 12
scene.height = 12
scene.density = 0.1
scene.train_count = 20
scene.test_count = 10
sensor.max_range_cells = 12
dataset.targets_per_scene = 40
dataset.starts_per_target = 8
train.lr = 0.05
train.steps = 20000
train.log_every = 5000
eval.use_stop = false
eval.max_steps = 100
eval.episodes = 500
eval.seeds = 0
)";

// Pipeline run twice for criterion 9; small enough to finish in seconds.
constexpr const char* kPipelineConfig = R"(seed = 11
scene.train_count = 4
scene.test_count = 3
dataset.targets_per_scene = 5
dataset.starts_per_target = 4
train.lr = 0.05
train.steps = 300
eval.episodes = 60
eval.seeds = 0, 1
)";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict gradient_check() {
  const auto t0 = Clock::now();
  NeoNavParams m(ModelConfig{}, 1);
  // Move every tensor (the zero-initialized heads included) off its init so
  // all paths carry gradient.
  CounterRng init(2);
  for (std::size_t i = 0; i < m.store().size(); ++i) {
    auto& v = m.store().value(i);
    const double bound = v.shape().size() == 2 ? std::sqrt(3.0 / static_cast<double>(v.shape()[1])) : 0.1;
    for (auto& x : v.data()) x = bound * (2.0 * init.uniform() - 1.0);
  }
  const SensorConfig sensor;
  std::vector<OccupancyGrid> scenes{generate_scene(3, 10, 10, 0.15)};
  auto ds = build_dataset(scenes, sample_tasks(scenes, 6, 4, TaskSampling{}), {sensor, GoalSpec{}, ""});
  std::vector<const Sample*> picks;
  for (std::size_t i = 0; i < ds.samples.size() && picks.size() < 8; i += 3) picks.push_back(&ds.samples[i]);
  const Batch batch = make_batch(picks, 4, sensor.rays);
  const CounterRng frozen(99);
  auto loss = [&](nn::ParamStore&) {
    CounterRng noise = frozen;
    return loss_batch(m, batch, noise, true).mean.total;
  };
  const auto r = nn::grad_check(loss, m.store(), 1e-5, kGradCoords, 7);
  const double secs = seconds_since(t0);
  return {r.max_rel_error <= kGradRelTol && r.coords_checked == kGradCoords && secs < kGradSeconds,
          fmt("max_rel_error=%.3g over %zu of %zu coords (worst %s[%zu]) in %.1fs", r.max_rel_error,
              r.coords_checked, m.store().scalar_count(), r.worst_param.c_str(), r.worst_index, secs)};
}

Verdict kl_oracle() {
  CounterRng rng(2024);
  double worst = 0.0;
  for (int pair = 0; pair < kKlPairs; ++pair) {
    nn::DiagGaussian q{nn::Vector(kKlDim), nn::Vector(kKlDim)}, p{nn::Vector(kKlDim), nn::Vector(kKlDim)};
    for (int i = 0; i < kKlDim; ++i) {
      q.mu(i) = rng.normal();
      p.mu(i) = rng.normal();
      q.log_var(i) = 2.0 * rng.uniform() - 1.0;
      p.log_var(i) = 2.0 * rng.uniform() - 1.0;
    }
    const double closed = nn::kl_diag_gaussians(q, p).value;
    // E_q[log q(z) - log p(z)]; the 2*pi terms cancel.
    double sum = 0.0;
    CounterRng mc = rng.split(static_cast<std::uint64_t>(pair));
    for (std::size_t s = 0; s < kKlSamples; ++s) {
      double lr = 0.0;
      for (int i = 0; i < kKlDim; ++i) {
        const double z = q.mu(i) + std::exp(0.5 * q.log_var(i)) * mc.normal();
        const double dq = z - q.mu(i), dp = z - p.mu(i);
        lr += 0.5 * (p.log_var(i) - q.log_var(i)) - 0.5 * dq * dq * std::exp(-q.log_var(i)) +
              0.5 * dp * dp * std::exp(-p.log_var(i));
      }
      sum += lr;
    }
    const double estimate = sum / static_cast<double>(kKlSamples);
    worst = std::max(worst, std::abs(estimate - closed) / closed);
  }
  return {worst <= kKlRelTol, fmt("worst relative gap %.4f%% over %d pairs, d=%d, %zu samples", 100 * worst, kKlPairs,
                                  kKlDim, kKlSamples)};
}

Verdict expert_optimality() {
  CounterRng rng(31);
  std::size_t queries = 0, mismatches = 0;
  for (int s = 0; s < 20; ++s) {
    const int w = 5 + static_cast<int>(rng.below(4)), h = 5 + static_cast<int>(rng.below(4));
    const double density = 0.1 * static_cast<double>(1 + rng.below(3));
    const auto g = generate_scene(rng.next(), w, h, density);
    const auto cells = g.free_cells();
    for (int t = 0; t < 6; ++t) {
      const auto [gr, gc] = cells[rng.below(cells.size())];
      const Pose goal{gr, gc, static_cast<int>(rng.below(4))};
      for (const auto& [r, c] : cells)
        for (int a = 0; a < 4; ++a) {
          const Pose start{r, c, a};
          const auto plan = shortest_path(g, start, goal, GoalSpec{}, 4);
          const int actions = plan ? static_cast<int>(plan->size()) - 1 : -1;
          const int moves = test::dijkstra(g, start, goal, {0.25, 181.0}, 4, 0);
          const auto geo = geodesic_m(g, start, goal);
          ++queries;
          if (actions != test::dijkstra(g, start, goal, GoalSpec{}, 4, 1) ||
              (geo ? *geo : -1.0) != (moves < 0 ? -1.0 : moves * g.cell_size_m))
            ++mismatches;
        }
    }
  }
  return {mismatches == 0, fmt("%zu mismatches in %zu start/goal queries on 20 scenes", mismatches, queries)};
}

Verdict spl_and_expert(const std::vector<OccupancyGrid>& test, const std::vector<Task>& tasks,
                       const SensorConfig& sensor, const GoalSpec& goal) {
  auto fixture = [](bool ok, double p, double l) {
    EpisodeResult r;
    r.success = ok;
    r.path_len_m = p;
    r.shortest_len_m = l;
    return std::vector<EpisodeResult>{r};
  };
  const double a = spl(fixture(false, 3.0, 2.0)), b = spl(fixture(true, 2.0, 2.0)), c = spl(fixture(true, 4.0, 2.0));
  bool ok = a == 0.0 && b == 1.0 && c == 0.5;
  std::string detail = fmt("fixtures=(%g, %g, %g)", a, b, c);
  for (bool use_stop : {false, true}) {
    EvalConfig ec;
    ec.use_stop = use_stop;
    ec.goal = goal;
    const auto r = evaluate(expert_policy(goal, sensor.azimuths), test, tasks, ec, sensor);
    ok = ok && r.spl == 1.0 && r.success_rate == 1.0;
    detail += fmt(" expert[%s] sr=%.6f spl=%.6f", use_stop ? "stop" : "nostop", r.success_rate, r.spl);
  }
  return {ok, detail + fmt(" over %zu tasks", tasks.size())};
}

// Best accuracy any function of the network inputs can reach: identical
// inputs with different expert labels cap it.
double aliasing_ceiling(const Dataset& ds) {
  std::map<std::vector<double>, std::map<int, int>> groups;
  for (const auto& s : ds.samples) {
    std::vector<double> key;
    for (const auto& v : s.x.views) key.insert(key.end(), v.values.begin(), v.values.end());
    key.insert(key.end(), s.g.values.begin(), s.g.values.end());
    const auto prev = s.prev_one_hot();
    key.insert(key.end(), prev.begin(), prev.end());
    groups[key][action_index(s.gt_action)]++;
  }
  int best = 0;
  for (const auto& [k, labels] : groups) {
    int m = 0;
    for (const auto& [a, n] : labels) m = std::max(m, n);
    best += m;
  }
  return static_cast<double>(best) / static_cast<double>(ds.samples.size());
}

Verdict overfit() {
  const auto t0 = Clock::now();
  std::vector<OccupancyGrid> scenes{generate_scene(1, 8, 8, 0.15)};
  auto ds = build_dataset(scenes, sample_tasks(scenes, 12, 11, TaskSampling{}), {SensorConfig{}, GoalSpec{}, ""});
  ds.samples.resize(std::min<std::size_t>(ds.samples.size(), 50));
  ModelConfig mc;
  mc.alpha = 1.0;
  TrainConfig tc;
  tc.steps = 2000;
  tc.batch_size = 50;
  tc.lr = 0.1;
  tc.seed = 11;
  const auto [m, log] = train(ds, mc, tc);
  const double acc = imitation_accuracy(m, ds), mse = reconstruction_mse(m, ds), secs = seconds_since(t0);
  return {acc >= kOverfitAcc && mse < kOverfitMse && secs < kOverfitSeconds,
          fmt("acc=%.3f (input-aliasing ceiling %.3f) mse=%.3g on %zu samples in %.1fs", acc, aliasing_ceiling(ds),
              mse, ds.samples.size(), secs)};
}

// ---------------------------------------------------------------------------

struct NavSetup {
  RunConfig cfg;
  cli::SceneSet scenes;
  std::vector<Task> tasks;
  Dataset dataset;
};

NavSetup nav_setup() {
  NavSetup s{RunConfig::parse(kNavConfig, "acceptance"), {}, {}, {}};
  s.scenes = cli::generate_scenes(s.cfg);
  s.tasks = cli::eval_tasks(s.cfg, s.scenes.test);
  const auto train_tasks = sample_training_tasks(
      s.scenes.train, static_cast<std::size_t>(s.cfg.integer("dataset.targets_per_scene")),
      static_cast<std::size_t>(s.cfg.integer("dataset.starts_per_target")), s.cfg.derive_seed("dataset.tasks"),
      s.cfg.task_sampling());
  s.dataset = build_dataset(s.scenes.train, train_tasks, {s.cfg.sensor(), s.cfg.goal(), s.cfg.dataset_hash()});
  return s;
}

struct SeedRun {
  std::shared_ptr<const NeoNavParams> model;
  MetricsReport report;
};

SeedRun train_and_eval(const NavSetup& s, Variant v, int seed) {
  RunConfig cfg = s.cfg;
  cfg.set("model.variant", std::string(variant_name(v)));
  TrainConfig tc = cfg.train();
  tc.seed = cfg.derive_seed("train", static_cast<std::uint64_t>(seed));
  auto [params, log] = train(s.dataset, cfg.model(), tc);
  auto model = std::make_shared<const NeoNavParams>(std::move(params));
  auto report = evaluate(model_policy(model, cfg.derive_seed("eval.policy", static_cast<std::uint64_t>(seed))),
                         s.scenes.test, s.tasks, cfg.eval(), cfg.sensor());
  std::cout << fmt("  %-6s seed %d: final ce %.4f, train acc %.3f, sr %.3f, spl %.3f\n",
                   std::string(variant_name(v)).c_str(), seed, log.records.back().ce,
                   imitation_accuracy(*model, s.dataset), report.success_rate, report.spl)
            << std::flush;
  return {model, report};
}

double mean_of(const std::vector<SeedRun>& runs, double MetricsReport::*field) {
  double sum = 0.0;
  for (const auto& r : runs) sum += r.report.*field;
  return sum / static_cast<double>(runs.size());
}

Verdict sweeps(const NavSetup& s, const std::vector<std::pair<std::string, PolicyFactory>>& policies) {
  const std::vector<int> budgets{10, 25, 50, 75, 100};
  const std::vector<double> radii{0.5, 1.0, 1.5, 2.0};
  bool ok = true;
  std::string detail;
  for (const auto& [name, factory] : policies) {
    const auto by_steps = sweep_steps(factory, s.scenes.test, s.tasks, s.cfg.eval(), s.cfg.sensor(), budgets);
    const auto by_radius = sweep_threshold(factory, s.scenes.test, s.tasks, s.cfg.eval(), s.cfg.sensor(), radii);
    std::string curve;
    for (const auto* c : {&by_steps, &by_radius}) {
      for (std::size_t i = 0; i < c->size(); ++i) {
        if (i && (*c)[i].success_rate < (*c)[i - 1].success_rate) ok = false;
        curve += fmt("%s%.3f", i ? "," : "", (*c)[i].success_rate);
      }
      curve += c == &by_steps ? " | " : "";
    }
    std::cout << "  " << name << ": steps " << curve << " (radius)\n";
    detail += (detail.empty() ? "" : ", ") + name;
  }
  return {ok, "nondecreasing for " + detail};
}

Verdict determinism(const fs::path& workdir) {
  std::string first;
  bool ok = true;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = workdir / ("pipeline_" + std::to_string(rep));
    fs::remove_all(dir);
    fs::create_directories(dir);
    io::write_file(dir / "run.cfg", kPipelineConfig);
    for (std::vector<std::string> cmd :
         {std::vector<std::string>{"scene-gen"}, {"dataset-build"}, {"train"}, {"eval", "--policy", "model"}}) {
      cmd.insert(cmd.begin(), "neonav");
      for (const auto& a : {std::string("--config"), (dir / "run.cfg").string(), std::string("--out"), dir.string()})
        cmd.push_back(a);
      std::vector<const char*> argv;
      for (const auto& a : cmd) argv.push_back(a.c_str());
      std::ostringstream out, err;
      if (cli::run(static_cast<int>(argv.size()), argv.data(), out, err) != 0) {
        std::cout << "  " << cmd[1] << " failed: " << err.str();
        ok = false;
      }
    }
    const std::string metrics = io::read_file(dir / "metrics.json");
    if (rep == 0) first = metrics;
    else ok = ok && metrics == first;
  }
  return {ok, fmt("metrics.json %s across two runs (%zu bytes)", ok ? "byte-identical" : "differs", first.size())};
}

void report(int id, const Verdict& v) {
  std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << "\n" << std::flush;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string workdir = (fs::temp_directory_path() / "neonav_acceptance").string();
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--workdir", workdir, "scratch directory")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  const std::set<int> run(only.begin(), only.end());
  auto want = [&](int id) { return run.empty() || run.contains(id); };

  const auto t_all = Clock::now();
  bool all = true;
  auto record = [&](int id, const Verdict& v) {
    report(id, v);
    all = all && v.pass;
  };

  if (want(1)) record(1, gradient_check());
  if (want(2)) record(2, kl_oracle());
  if (want(3)) record(3, expert_optimality());

  std::optional<NavSetup> nav;
  if (want(4) || want(6) || want(7) || want(8)) {
    nav = nav_setup();
    std::cout << "  protocol: " << nav->scenes.train.size() << " train / " << nav->scenes.test.size()
              << " held-out scenes, " << nav->dataset.samples.size() << " samples, " << nav->tasks.size()
              << " eval tasks\n";
  }
  if (want(4)) record(4, spl_and_expert(nav->scenes.test, nav->tasks, nav->cfg.sensor(), nav->cfg.goal()));
  if (want(5)) record(5, overfit());

  std::map<Variant, std::vector<SeedRun>> runs;
  std::vector<MetricsReport> random;
  if (want(6) || want(7) || want(8)) {
    const auto t0 = Clock::now();
    for (int s = 0; s < kSeeds; ++s) runs[Variant::Full].push_back(train_and_eval(*nav, Variant::Full, s));
    for (int s = 0; s < kSeeds; ++s) {
      random.push_back(evaluate(random_walk_policy(nav->cfg.derive_seed("eval.policy", static_cast<std::uint64_t>(s)),
                                                   false),
                                nav->scenes.test, nav->tasks, nav->cfg.eval(), nav->cfg.sensor()));
      std::cout << fmt("  random seed %d: sr %.3f, spl %.3f\n", s, random.back().success_rate, random.back().spl);
    }
    const double secs = seconds_since(t0);
    double rw_sr = 0.0, rw_spl = 0.0;
    for (const auto& r : random) rw_sr += r.success_rate / kSeeds, rw_spl += r.spl / kSeeds;
    const double sr = mean_of(runs[Variant::Full], &MetricsReport::success_rate);
    const double sp = mean_of(runs[Variant::Full], &MetricsReport::spl);
    if (want(6))
      record(6, {sr >= rw_sr + kMarginSr && sp > rw_spl && secs <= kGeneralizationSeconds,
                 fmt("full sr=%.3f spl=%.3f vs random sr=%.3f spl=%.3f (margin %+.1f pp, need +%.0f) in %.0fs", sr, sp,
                     rw_sr, rw_spl, 100 * (sr - rw_sr), 100 * kMarginSr, secs)});
  }
  if (want(7) || want(8)) {
    for (Variant v : {Variant::NoGen, Variant::NoMoP})
      for (int s = 0; s < kSeeds; ++s) runs[v].push_back(train_and_eval(*nav, v, s));
  }
  if (want(7)) {
    const double full = mean_of(runs[Variant::Full], &MetricsReport::success_rate);
    const double nogen = mean_of(runs[Variant::NoGen], &MetricsReport::success_rate);
    const double nomop = mean_of(runs[Variant::NoMoP], &MetricsReport::success_rate);
    const bool strict = full >= nogen && full >= nomop;
    const bool soft = !strict && full + kSoftTie >= nogen && full + kSoftTie >= nomop;
    record(7, {strict, fmt("full %.3f, nogen %.3f, nomop %.3f over seeds 0-%d%s", full, nogen, nomop, kSeeds - 1,
                           soft ? " (soft failure: within 1 point)" : "")});
  }
  if (want(8)) {
    std::vector<std::pair<std::string, PolicyFactory>> policies{
        {"random", random_walk_policy(nav->cfg.derive_seed("eval.policy"), false)},
        {"expert", expert_policy(nav->cfg.goal(), nav->cfg.sensor().azimuths)}};
    for (Variant v : {Variant::Full, Variant::NoGen, Variant::NoMoP})
      policies.emplace_back(std::string(variant_name(v)), model_policy(runs[v][0].model, nav->cfg.derive_seed("eval.policy")));
    record(8, sweeps(*nav, policies));
  }
  if (want(9)) record(9, determinism(workdir));

  std::cout << fmt("total %.0fs\n", seconds_since(t_all));
  return all ? 0 : 1;
}
