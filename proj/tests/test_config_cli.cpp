#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "neonav/cli.hpp"
#include "test_util.hpp"

using namespace neonav;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSmallConfig = R"(# tiny pipeline
seed = 5
scene.width = 8
scene.height = 8
scene.train_count = 2
scene.test_count = 2
sensor.rays = 8
dataset.targets_per_scene = 3
dataset.starts_per_target = 2
model.latent = 4
model.encoder_hidden = 8
model.feature = 8
model.inference_hidden = 8
model.prior_hidden = 8
model.decoder_hidden = 8
model.action_feature = 4
model.classifier_hidden = 8
train.batch_size = 8
train.lr = 0.05
train.steps = 20
train.log_every = 10
eval.episodes = 6
eval.seeds = 0, 1
eval.max_steps = 30
)";

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "neonav");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

fs::path write_config(const fs::path& dir) {
  const fs::path p = dir / "run.cfg";
  io::write_file(p, kSmallConfig);
  return p;
}

void pipeline(const fs::path& dir) {
  const std::string cfg = write_config(dir).string(), out = (dir / "run").string();
  for (const std::vector<std::string>& cmd :
       {std::vector<std::string>{"scene-gen"}, {"dataset-build"}, {"train"}, {"eval", "--policy", "model", "--trace"}}) {
    auto args = cmd;
    for (const char* a : {"--config", cfg.c_str(), "--out", out.c_str()}) args.push_back(a);
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << cmd[0] << ": " << r.err;
  }
}

}  // namespace

TEST(Config, DefaultsAndNormalization) {
  const RunConfig a;
  const auto b = RunConfig::parse("scene.density = 0.10  # comment\n\nsensor.rays=32\neval.seeds = 0\n");
  EXPECT_EQ(a.canonical(), b.canonical());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.raw("model.beta"), "0.0001");
  EXPECT_EQ(a.integer("sensor.rays"), 32);
  EXPECT_EQ(RunConfig::parse("model.sample_at_test = 1").boolean("model.sample_at_test"), true);
  EXPECT_EQ(RunConfig::parse("eval.seeds = 3, 1,2").uint_list("eval.seeds"), (std::vector<std::uint64_t>{3, 1, 2}));
}

TEST(Config, HashesTrackRelevantKeys) {
  RunConfig a;
  RunConfig b = a;
  b.set("train.lr", "0.5");
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.dataset_hash(), b.dataset_hash());
  b.set("scene.density", "0.2");
  EXPECT_NE(a.dataset_hash(), b.dataset_hash());
  EXPECT_EQ(a.hash().size(), 16u);
  EXPECT_NE(a.derive_seed("x"), a.derive_seed("y"));
  EXPECT_NE(a.derive_seed("x", 0), a.derive_seed("x", 1));
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(RunConfig::parse("bogus.key = 1"), Error);
  EXPECT_THROW(RunConfig::parse("scene.width = twelve"), Error);
  EXPECT_THROW(RunConfig::parse("scene.width"), Error);
  EXPECT_THROW(RunConfig::parse("model.sample_at_test = maybe"), Error);
  EXPECT_THROW(RunConfig::parse("eval.seeds = 1,,2"), Error);
  try {
    RunConfig::parse("seed = 1\nnope = 2\n", "x.cfg");
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "schema");
    EXPECT_NE(std::string(e.what()).find("x.cfg:2"), std::string::npos);
  }
}

TEST(Config, TypedViews) {
  const auto c = RunConfig::parse("model.variant = nomop\nsensor.rays = 16\neval.use_stop = true\nseed = 3");
  EXPECT_EQ(c.model().variant, Variant::NoMoP);
  EXPECT_EQ(c.model().rays, 16);
  EXPECT_EQ(c.sensor().rays, 16);
  EXPECT_TRUE(c.eval().use_stop);
  EXPECT_EQ(c.train().seed, c.derive_seed("train"));
  EXPECT_THROW(static_cast<void>(RunConfig::parse("model.variant = big").model()), Error);
}

TEST(Cli, UsageAndConfigDump) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  const auto r = run_cli({"config"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("scene.width = 12"), std::string::npos);
}

TEST(Cli, ErrorsAreJson) {
  test::TempDir dir("cli_err");
  const auto r = run_cli({"train", "--out", dir.path().string()});
  EXPECT_EQ(r.code, 1);
  const auto j = Json::parse(r.err);
  EXPECT_EQ(j["error"], "missing_file");
  const auto bad = run_cli({"scene-gen", "--set", "nope=1", "--out", dir.path().string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_EQ(Json::parse(bad.err)["error"], "schema");
}

TEST(Cli, HashMismatchNeedsForce) {
  test::TempDir dir("cli_hash");
  const std::string cfg = write_config(dir.path()).string(), out = dir.path().string();
  ASSERT_EQ(run_cli({"scene-gen", "--config", cfg, "--out", out}).code, 0);
  const auto r = run_cli({"dataset-build", "--config", cfg, "--out", out, "--seed", "99"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(Json::parse(r.err)["error"], "hash_mismatch");
  const auto forced = run_cli({"dataset-build", "--config", cfg, "--out", out, "--seed", "99", "--force"});
  EXPECT_EQ(forced.code, 0) << forced.err;
  EXPECT_NE(forced.err.find("warning"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir.path() / "dataset.bin"));
}

TEST(Cli, PipelineIsDeterministic) {
  test::TempDir a("cli_det_a"), b("cli_det_b");
  pipeline(a.path());
  pipeline(b.path());
  for (const char* f : {"metrics.json", "metrics.csv", "train_log.csv", "episodes.jsonl", "dataset.bin",
                        "checkpoint/manifest.json", "checkpoint/p000_encoder.l0.weight.f64"})
    EXPECT_EQ(slurp(a.path() / "run" / f), slurp(b.path() / "run" / f)) << f;
  const auto m = Json::parse(slurp(a.path() / "run" / "metrics.json"));
  EXPECT_EQ(m["episodes"], 12);
  EXPECT_EQ(m["per_seed"].size(), 2u);
}

TEST(Cli, RenderPathReplaysTrace) {
  test::TempDir dir("cli_render");
  pipeline(dir.path());
  const std::string cfg = (dir.path() / "run.cfg").string(), out = (dir.path() / "run").string();
  const auto r = run_cli({"render-path", "--config", cfg, "--out", out, "--episode", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto txt = slurp(dir.path() / "run" / "path_1.txt");
  const auto svg = slurp(dir.path() / "run" / "path_1.svg");
  EXPECT_NE(txt.find('*'), std::string::npos);
  EXPECT_NE(svg.find("data-format-version=\"1\""), std::string::npos);
  EXPECT_NE(svg.find("class=\"goal\""), std::string::npos);

  // a trace whose poses disagree with its actions is rejected
  std::istringstream lines(slurp(dir.path() / "run" / "episodes.jsonl"));
  std::string line;
  std::getline(lines, line);
  auto j = Json::parse(line);
  j["trajectory"].push_back(j["trajectory"].back());
  j["actions"].push_back("move_forward");
  j["trajectory"].back()[0] = j["trajectory"].back()[0].get<int>() + 3;
  const auto bad = dir.path() / "bad.jsonl";
  io::write_file(bad, j.dump() + "\n");
  const auto rb = run_cli({"render-path", "--config", cfg, "--out", out, "--trace", bad.string()});
  EXPECT_EQ(rb.code, 1);
  EXPECT_EQ(Json::parse(rb.err)["error"], "replay");
  EXPECT_EQ(run_cli({"render-path", "--config", cfg, "--out", out, "--episode", "999"}).code, 1);
}

TEST(Cli, DumpEmbeddings) {
  test::TempDir dir("cli_dump");
  pipeline(dir.path());
  const std::string cfg = (dir.path() / "run.cfg").string(), out = (dir.path() / "run").string();
  const auto r = run_cli({"dump-embeddings", "--config", cfg, "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(dir.path() / "run" / "embeddings.csv");
  EXPECT_EQ(csv.rfind("# neonav embeddings v1\nmu_0,mu_1,mu_2,mu_3,predicted,gt\n", 0), 0u);
  const auto ds = load_dataset(dir.path() / "run" / "dataset.bin");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), ds.samples.size() + 2);
}

TEST(Cli, EvalBaselinesAndCheckpointMismatch) {
  test::TempDir dir("cli_eval");
  pipeline(dir.path());
  const std::string cfg = (dir.path() / "run.cfg").string(), out = (dir.path() / "run").string();
  const auto e = run_cli({"eval", "--config", cfg, "--out", out, "--policy", "expert", "--workers", "2"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto m = Json::parse(slurp(dir.path() / "run" / "metrics.json"));
  EXPECT_EQ(m["success_rate"], 1.0);
  EXPECT_EQ(m["policy"], "expert");
  // a different scene configuration invalidates scenes and checkpoint alike
  const auto mm = run_cli({"eval", "--config", cfg, "--out", out, "--policy", "model", "--set", "scene.density=0.2"});
  EXPECT_EQ(mm.code, 1);
  EXPECT_EQ(Json::parse(mm.err)["error"], "hash_mismatch");
  EXPECT_EQ(run_cli({"eval", "--config", cfg, "--out", out, "--policy", "oracle"}).code, 1);
}
