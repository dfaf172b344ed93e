#ifndef NEONAV_CLI_HPP
#define NEONAV_CLI_HPP

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "neonav/config.hpp"
#include "neonav/evalharness.hpp"
#include "neonav/expert.hpp"
#include "neonav/gridworld.hpp"
#include "neonav/model.hpp"
#include "neonav/trainer.hpp"

namespace neonav::cli {

namespace fs = std::filesystem;

inline constexpr int kSceneIndexVersion = 1;
inline constexpr int kSvgFormatVersion = 1;
inline constexpr int kEmbeddingFormatVersion = 1;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out = "run";
};

inline RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("usage", "--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1), "--set");
  }
  if (c.seed_given) cfg.set("seed", std::to_string(c.seed), "--seed");
  return cfg;
}

inline void require_file(const fs::path& p, std::string_view what) {
  if (!fs::exists(p)) throw Error("missing_file", std::string(what) + " not found: " + p.string());
}

/// Hash check that can be waived with --force; waived mismatches are still
/// reported on stderr.
inline void check_hash(std::string_view what, const std::string& expected, const std::string& found, bool force,
                       std::ostream& err) {
  if (expected == found) return;
  const std::string msg = std::string(what) + " hash " + found + " does not match " + expected;
  if (!force) throw Error("hash_mismatch", msg);
  err << "warning: " << msg << " (ignored by --force)\n";
}

// ---------------------------------------------------------------------------
// Scene sets
// ---------------------------------------------------------------------------

struct SceneSet {
  std::vector<OccupancyGrid> train;
  std::vector<OccupancyGrid> test;
  std::string hash;
};

inline std::vector<OccupancyGrid> generate_split(const RunConfig& cfg, std::string_view tag, std::int64_t count) {
  std::vector<OccupancyGrid> out;
  for (std::int64_t i = 0; i < count; ++i)
    out.push_back(generate_scene(cfg.derive_seed(tag, static_cast<std::uint64_t>(i)),
                                 static_cast<int>(cfg.integer("scene.width")),
                                 static_cast<int>(cfg.integer("scene.height")), cfg.real("scene.density"),
                                 cfg.real("scene.cell_size_m")));
  return out;
}

inline SceneSet generate_scenes(const RunConfig& cfg) {
  return {generate_split(cfg, "scene.train", cfg.integer("scene.train_count")),
          generate_split(cfg, "scene.test", cfg.integer("scene.test_count")), cfg.dataset_hash()};
}

inline std::string scene_file(std::string_view split, std::size_t i) {
  std::ostringstream os;
  os << split << '_' << std::setw(3) << std::setfill('0') << i << ".json";
  return os.str();
}

inline void save_scene_set(const fs::path& dir, const SceneSet& set) {
  Json train = Json::array(), test = Json::array();
  for (std::size_t i = 0; i < set.train.size(); ++i) {
    save_scene(dir / scene_file("train", i), set.train[i], set.hash);
    train.push_back(scene_file("train", i));
  }
  for (std::size_t i = 0; i < set.test.size(); ++i) {
    save_scene(dir / scene_file("test", i), set.test[i], set.hash);
    test.push_back(scene_file("test", i));
  }
  io::write_json(dir / "index.json",
                 {{"version", kSceneIndexVersion}, {"config_hash", set.hash}, {"train", train}, {"test", test}});
}

inline SceneSet load_scene_set(const fs::path& dir) {
  const fs::path index = dir / "index.json";
  require_file(index, "scene index");
  const Json doc = io::read_json(index);
  if (io::field<int>(doc, "version") != kSceneIndexVersion) throw Error("schema", "unsupported scene index version");
  SceneSet set;
  set.hash = io::field<std::string>(doc, "config_hash");
  for (const auto& f : io::field<std::vector<std::string>>(doc, "train")) {
    require_file(dir / f, "scene");
    set.train.push_back(load_scene(dir / f));
  }
  for (const auto& f : io::field<std::vector<std::string>>(doc, "test")) {
    require_file(dir / f, "scene");
    set.test.push_back(load_scene(dir / f));
  }
  return set;
}

inline std::vector<Task> eval_tasks(const RunConfig& cfg, std::span<const OccupancyGrid> test) {
  return sample_tasks(test, static_cast<std::size_t>(cfg.integer("eval.episodes")), cfg.derive_seed("eval.tasks"),
                      cfg.task_sampling());
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline Action parse_action(std::string_view name) {
  for (Action a : kAllActions)
    if (action_name(a) == name) return a;
  throw Error("schema", "unknown action '" + std::string(name) + "'");
}

inline Pose parse_pose(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw Error("schema", "pose must be [row, col, azimuth]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

struct Trace {
  std::size_t scene = 0;
  Pose start, goal;
  std::vector<Pose> trajectory;
  std::vector<Action> actions;
};

inline Trace parse_trace(const Json& line) {
  Trace t;
  t.scene = io::field<std::size_t>(line, "scene");
  t.start = parse_pose(line.at("start"));
  t.goal = parse_pose(line.at("goal"));
  for (const auto& p : line.at("trajectory")) t.trajectory.push_back(parse_pose(p));
  for (const auto& a : line.at("actions")) t.actions.push_back(parse_action(a.get<std::string>()));
  return t;
}

/// Replays the recorded actions through the simulator and checks that every
/// recorded pose is the one the simulator produces and lies on a free cell.
inline void validate_trace(const OccupancyGrid& grid, const Trace& t, int azimuths) {
  if (t.trajectory.empty() || t.trajectory.front() != t.start)
    throw Error("replay", "trajectory does not begin at the start pose");
  if (t.trajectory.size() != t.actions.size() + 1) throw Error("replay", "trajectory and action counts disagree");
  if (!pose_valid(grid, t.goal, azimuths)) throw Error("replay", "goal pose is not free");
  Pose pose = t.start;
  for (std::size_t i = 0; i < t.actions.size(); ++i) {
    if (!pose_valid(grid, pose, azimuths)) throw Error("replay", "pose " + std::to_string(i) + " is not free");
    pose = step(grid, pose, t.actions[i], azimuths).next_pose;
    if (pose != t.trajectory[i + 1])
      throw Error("replay", "simulator disagrees with recorded pose " + std::to_string(i + 1));
  }
}

inline char heading_glyph(int azimuth, int azimuths) {
  static constexpr char kArrows[] = {'^', '<', 'v', '>'};
  const double deg = heading_deg(azimuth, azimuths);
  return kArrows[static_cast<int>(std::lround(deg / 90.0)) % 4];
}

/// '#' blocked, '.' free, 'o' visited, start drawn as a heading arrow, goal '*'.
inline std::string render_ascii(const OccupancyGrid& grid, const Trace& t, int azimuths) {
  std::vector<std::string> rows(static_cast<std::size_t>(grid.height), std::string(grid.width, '.'));
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c)
      if (grid.is_blocked(r, c)) rows[r][c] = '#';
  for (const auto& p : t.trajectory) rows[p.row][p.col] = 'o';
  rows[t.goal.row][t.goal.col] = '*';
  rows[t.start.row][t.start.col] = heading_glyph(t.start.azimuth, azimuths);
  std::string out;
  for (const auto& r : rows) out += r + "\n";
  return out;
}

inline std::string render_svg(const OccupancyGrid& grid, const Trace& t, int azimuths) {
  constexpr double s = 24.0;
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  auto cx = [&](int c) { return (c + 0.5) * s; };
  auto cy = [&](int r) { return (r + 0.5) * s; };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << grid.width * s << "\" height=\"" << grid.height * s
     << "\" data-format-version=\"" << kSvgFormatVersion << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c)
      if (grid.is_blocked(r, c))
        os << "<rect class=\"wall\" x=\"" << c * s << "\" y=\"" << r * s << "\" width=\"" << s << "\" height=\"" << s
           << "\" fill=\"#333333\"/>\n";
  os << "<polyline class=\"path\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"3\" points=\"";
  for (std::size_t i = 0; i < t.trajectory.size(); ++i)
    os << (i ? " " : "") << cx(t.trajectory[i].col) << ',' << cy(t.trajectory[i].row);
  os << "\"/>\n";

  // start: triangle pointing along the heading
  {
    const auto [dr, dc] = ray_direction(heading_deg(t.start.azimuth, azimuths));
    const double x = cx(t.start.col), y = cy(t.start.row), k = 0.4 * s;
    os << "<polygon class=\"start\" fill=\"#2ca02c\" points=\"" << x + dc * k << ',' << y + dr * k << ' '
       << x - dc * k * 0.6 - dr * k * 0.7 << ',' << y - dr * k * 0.6 + dc * k * 0.7 << ' '
       << x - dc * k * 0.6 + dr * k * 0.7 << ',' << y - dr * k * 0.6 - dc * k * 0.7 << "\"/>\n";
  }
  // goal: five-pointed star
  {
    const double x = cx(t.goal.col), y = cy(t.goal.row);
    os << "<polygon class=\"goal\" fill=\"#d62728\" points=\"";
    for (int i = 0; i < 10; ++i) {
      const double rad = (i % 2 ? 0.18 : 0.45) * s;
      const double a = -std::numbers::pi / 2 + i * std::numbers::pi / 5;
      os << (i ? " " : "") << x + rad * std::cos(a) << ',' << y + rad * std::sin(a);
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void banner(std::ostream& out, const RunConfig& cfg) {
  out << "config_hash=" << cfg.hash() << " seed=" << cfg.uinteger("seed") << "\n";
}

inline void cmd_scene_gen(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
  const SceneSet set = generate_scenes(cfg);
  save_scene_set(out_dir / "scenes", set);
  out << "scenes: " << set.train.size() << " train, " << set.test.size() << " test -> "
      << (out_dir / "scenes").string() << "\n";
}

inline void cmd_dataset_build(const RunConfig& cfg, const fs::path& out_dir, const fs::path& scene_dir,
                              const std::string& format, bool force, std::ostream& out, std::ostream& err) {
  const SceneSet set = load_scene_set(scene_dir);
  check_hash("scene set", cfg.dataset_hash(), set.hash, force, err);
  TaskSampling ts = cfg.task_sampling();
  const auto tasks = sample_training_tasks(set.train, static_cast<std::size_t>(cfg.integer("dataset.targets_per_scene")),
                                           static_cast<std::size_t>(cfg.integer("dataset.starts_per_target")),
                                           cfg.derive_seed("dataset.tasks"), ts);
  const Dataset ds = build_dataset(set.train, tasks, {cfg.sensor(), cfg.goal(), cfg.dataset_hash()});
  save_dataset(out_dir / "dataset.bin", ds);
  if (format == "jsonl") io::write_file(out_dir / "dataset.jsonl", dataset_to_jsonl(ds));
  out << "dataset: " << tasks.size() << " tasks, " << ds.samples.size() << " samples -> "
      << (out_dir / "dataset.bin").string() << "\n";
}

inline void cmd_train(const RunConfig& cfg, const fs::path& out_dir, const fs::path& dataset_path, bool force,
                      std::ostream& out, std::ostream& err) {
  require_file(dataset_path, "dataset");
  const Dataset ds = load_dataset(dataset_path);
  check_hash("dataset", cfg.dataset_hash(), ds.manifest.config_hash, force, err);
  TrainConfig tc = cfg.train();
  tc.meta = {cfg.hash(), ds.manifest.config_hash, tc.seed, 0};
  if (tc.eval_every) tc.checkpoint_dir = out_dir / "checkpoints";
  NeoNavParams params(cfg.model(), tc.seed);
  const TrainLog log = train_in_place(params, ds, tc, [&](const TrainRecord& r) {
    out << "step " << r.step << " loss " << r.loss << " ce " << r.ce << " acc " << r.acc << "\n";
  });
  CheckpointMeta meta = tc.meta;
  meta.steps = tc.steps;
  save_model(out_dir / "checkpoint", params, meta);
  io::write_file(out_dir / "train_log.csv", log.to_csv());
  out << "checkpoint -> " << (out_dir / "checkpoint").string() << "\n";
}

struct EvalArgs {
  std::string policy = "random";
  std::string checkpoint;
  std::string dataset;
  std::string scenes;
  bool force = false;
  bool trace = false;
  unsigned workers = 1;
};

inline void cmd_eval(const RunConfig& cfg, const fs::path& out_dir, const EvalArgs& a, std::ostream& out,
                     std::ostream& err) {
  const SceneSet set = load_scene_set(a.scenes.empty() ? out_dir / "scenes" : fs::path(a.scenes));
  check_hash("scene set", cfg.dataset_hash(), set.hash, a.force, err);
  const EvalConfig ec = cfg.eval();
  const SensorConfig sensor = cfg.sensor();
  const std::uint64_t policy_seed = cfg.derive_seed("eval.policy");

  PolicyFactory factory;
  if (a.policy == "random") {
    factory = random_walk_policy(policy_seed, ec.use_stop);
  } else if (a.policy == "expert") {
    factory = expert_policy(ec.goal, sensor.azimuths);
  } else if (a.policy == "model") {
    const fs::path ckpt = a.checkpoint.empty() ? out_dir / "checkpoint" : fs::path(a.checkpoint);
    require_file(ckpt / "manifest.json", "checkpoint");
    auto [params, meta] = load_model(ckpt);
    check_hash("checkpoint dataset", cfg.dataset_hash(), meta.dataset_hash, a.force, err);
    if (!a.dataset.empty()) {
      require_file(a.dataset, "dataset");
      const Dataset ds = load_dataset(a.dataset);
      check_hash("dataset", meta.dataset_hash, ds.manifest.config_hash, a.force, err);
    }
    if (params.config().azimuths != sensor.azimuths || params.config().rays != sensor.rays)
      throw Error("schema", "checkpoint sensor layout does not match the configuration");
    factory = model_policy(std::make_shared<const NeoNavParams>(std::move(params)), policy_seed);
  } else {
    throw Error("usage", "unknown policy '" + a.policy + "' (random | expert | model)");
  }

  const auto tasks = eval_tasks(cfg, set.test);
  const MetricsReport report = evaluate(factory, set.test, tasks, ec, sensor, a.workers);
  io::write_json(out_dir / "metrics.json", metrics_to_json(report, cfg.hash(), a.policy));
  io::write_file(out_dir / "metrics.csv", metrics_to_csv(report));
  if (a.trace) io::write_file(out_dir / "episodes.jsonl", episodes_to_jsonl(report, tasks));
  out << "policy " << a.policy << ": episodes " << report.episodes << " success_rate " << report.success_rate
      << " spl " << report.spl << "\n";
}

inline void cmd_render_path(const RunConfig& cfg, const fs::path& out_dir, const std::string& trace_path,
                            const std::string& scenes, std::size_t episode, std::ostream& out) {
  const fs::path tp = trace_path.empty() ? out_dir / "episodes.jsonl" : fs::path(trace_path);
  require_file(tp, "trace");
  const SceneSet set = load_scene_set(scenes.empty() ? out_dir / "scenes" : fs::path(scenes));
  std::istringstream in(io::read_file(tp));
  std::string line;
  for (std::size_t i = 0; std::getline(in, line); ++i) {
    if (i != episode) continue;
    Json doc;
    try {
      doc = Json::parse(line);
    } catch (const Json::exception& e) {
      throw Error("schema", tp.string() + ": " + e.what());
    }
    const Trace t = parse_trace(doc);
    if (t.scene >= set.test.size()) throw Error("schema", "trace references unknown scene");
    const auto& grid = set.test[t.scene];
    const int k = cfg.sensor().azimuths;
    validate_trace(grid, t, k);
    const std::string ascii = render_ascii(grid, t, k);
    const std::string stem = "path_" + std::to_string(episode);
    io::write_file(out_dir / (stem + ".txt"), ascii);
    io::write_file(out_dir / (stem + ".svg"), render_svg(grid, t, k));
    out << ascii << "svg -> " << (out_dir / (stem + ".svg")).string() << "\n";
    return;
  }
  throw Error("range", "episode " + std::to_string(episode) + " not present in " + tp.string());
}

inline void cmd_dump_embeddings(const RunConfig& cfg, const fs::path& out_dir, const std::string& checkpoint,
                                const std::string& dataset, bool force, std::ostream& out, std::ostream& err) {
  const fs::path ckpt = checkpoint.empty() ? out_dir / "checkpoint" : fs::path(checkpoint);
  const fs::path dp = dataset.empty() ? out_dir / "dataset.bin" : fs::path(dataset);
  require_file(ckpt / "manifest.json", "checkpoint");
  require_file(dp, "dataset");
  const auto [params, meta] = load_model(ckpt);
  const Dataset ds = load_dataset(dp);
  check_hash("dataset", meta.dataset_hash, ds.manifest.config_hash, force, err);
  (void)cfg;

  std::ostringstream os;
  os.precision(17);
  os << "# neonav embeddings v" << kEmbeddingFormatVersion << "\n";
  const int d = params.config().latent;
  for (int i = 0; i < d; ++i) os << "mu_" << i << ',';
  os << "predicted,gt\n";
  for (const auto& s : ds.samples) {
    const auto q = infer_posterior(params, s.x, s.g);
    const auto p = act(params, s.x, s.g, s.prev_one_hot());
    const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    for (int i = 0; i < d; ++i) os << q.mu(i) << ',';
    os << action_name(action_from_index(best)) << ',' << action_name(s.gt_action) << "\n";
  }
  io::write_file(out_dir / "embeddings.csv", os.str());
  out << "embeddings: " << ds.samples.size() << " rows -> " << (out_dir / "embeddings.csv").string() << "\n";
}

/// Entry point shared by the executable and the tests. Errors become one
/// JSON line on `err` and a nonzero exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"neonav: target-driven navigation with next-expected-observation imitation"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "key = value configuration file");
    sub->add_option("--set", common.overrides, "override one key (key=value), repeatable");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { common.seed = s, common.seed_given = true; }, "master seed");
    sub->add_option("--out", common.out, "output directory")->capture_default_str();
  };

  auto* scene_gen = app.add_subcommand("scene-gen", "generate training and held-out scenes");
  add_common(scene_gen);

  std::string scenes_dir, format = "bin", dataset_path, checkpoint, trace_path;
  bool force = false;
  auto* dataset_build = app.add_subcommand("dataset-build", "expert trajectories on the training scenes");
  add_common(dataset_build);
  dataset_build->add_option("--scenes", scenes_dir, "scene directory (default OUT/scenes)");
  dataset_build->add_option("--format", format, "bin | jsonl (jsonl also writes the binary)")
      ->check(CLI::IsMember({"bin", "jsonl"}));
  dataset_build->add_flag("--force", force, "accept scenes produced under another configuration");

  auto* train = app.add_subcommand("train", "train the model on a dataset");
  add_common(train);
  train->add_option("--dataset", dataset_path, "dataset file (default OUT/dataset.bin)");
  train->add_flag("--force", force, "accept a dataset produced under another configuration");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "closed-loop evaluation on the held-out scenes");
  add_common(eval);
  eval->add_option("--policy", ea.policy, "random | expert | model")->capture_default_str();
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint directory (default OUT/checkpoint)");
  eval->add_option("--dataset", ea.dataset, "dataset the checkpoint must match");
  eval->add_option("--scenes", ea.scenes, "scene directory (default OUT/scenes)");
  eval->add_option("--workers", ea.workers, "episode worker threads")->check(CLI::Range(1u, 256u));
  eval->add_flag("--force", ea.force, "evaluate despite hash mismatches");
  eval->add_flag("--trace", ea.trace, "write per-episode traces to OUT/episodes.jsonl");

  std::size_t episode = 0;
  auto* render = app.add_subcommand("render-path", "draw one traced episode as ASCII and SVG");
  add_common(render);
  render->add_option("--trace", trace_path, "episode trace (default OUT/episodes.jsonl)");
  render->add_option("--scenes", scenes_dir, "scene directory (default OUT/scenes)");
  render->add_option("--episode", episode, "episode index")->capture_default_str();

  auto* dump = app.add_subcommand("dump-embeddings", "posterior means with predicted and expert actions");
  add_common(dump);
  dump->add_option("--checkpoint", checkpoint, "checkpoint directory (default OUT/checkpoint)");
  dump->add_option("--dataset", dataset_path, "dataset file (default OUT/dataset.bin)");
  dump->add_flag("--force", force, "accept a dataset produced under another configuration");

  auto* show = app.add_subcommand("config", "print the configuration schema with defaults");
  (void)show;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << Json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    if (show->parsed()) {
      out << RunConfig::describe();
      return 0;
    }
    const RunConfig cfg = resolve_config(common);
    const fs::path out_dir = common.out;
    banner(out, cfg);
    if (scene_gen->parsed()) {
      cmd_scene_gen(cfg, out_dir, out);
    } else if (dataset_build->parsed()) {
      cmd_dataset_build(cfg, out_dir, scenes_dir.empty() ? out_dir / "scenes" : fs::path(scenes_dir), format, force,
                        out, err);
    } else if (train->parsed()) {
      cmd_train(cfg, out_dir, dataset_path.empty() ? out_dir / "dataset.bin" : fs::path(dataset_path), force, out,
                err);
    } else if (eval->parsed()) {
      cmd_eval(cfg, out_dir, ea, out, err);
    } else if (render->parsed()) {
      cmd_render_path(cfg, out_dir, trace_path, scenes_dir, episode, out);
    } else if (dump->parsed()) {
      cmd_dump_embeddings(cfg, out_dir, checkpoint, dataset_path, force, out, err);
    }
  } catch (const Error& e) {
    err << Json{{"error", e.kind()}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << Json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace neonav::cli

#endif  // NEONAV_CLI_HPP
