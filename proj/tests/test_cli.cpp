#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "progrow/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(PROGROW_CLI_PATH) + " " + args + " 2>/tmp/progrow_cli_stderr_" + std::to_string(::getpid());
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string last_stderr() {
  std::ifstream in("/tmp/progrow_cli_stderr_" + std::to_string(::getpid()));
  return {std::istreambuf_iterator<char>(in), {}};
}

json last_json_line(const std::string& out) {
  auto end = out.find_last_not_of('\n');
  auto start = out.rfind('\n', end);
  return json::parse(out.substr(start == std::string::npos ? 0 : start + 1, end - (start == std::string::npos ? 0 : start + 1) + 1));
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("progrow_cli_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const std::string kTiny = "-q --image-size 32 --epochs 1,1 --batch-size 32";

}  // namespace

TEST(CliPartition, BalancedSizes) {
  auto r = cli("partition --backbone resnet152 --stages 4 --json");
  ASSERT_EQ(r.code, 0);
  auto j = last_json_line(r.out);
  EXPECT_EQ(j["sizes"], json({12, 12, 13, 13}));
  EXPECT_EQ(j["stages"][2]["blocks"], json({25, 37}));
  EXPECT_EQ(j["stages"][3]["head"], "standard");

  r = cli("partition --backbone vit-l16 --stages 2 --json");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(last_json_line(r.out)["sizes"], json({12, 12}));

  r = cli("partition --backbone resnet18 --stages 8");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(last_json_line(r.out)["sizes"], json(std::vector<int>(8, 1)));
  EXPECT_NE(r.out.find("stage"), std::string::npos);
}

TEST(CliPartition, StageCountOutOfRangeIsConfigError) {
  EXPECT_EQ(cli("partition --backbone resnet18 --stages 9").code, 2);
  EXPECT_NE(last_stderr().find("stages"), std::string::npos);
  EXPECT_EQ(cli("partition --backbone resnet18 --stages 0").code, 2);
  EXPECT_EQ(cli("partition --backbone resnet19").code, 2);
}

TEST(CliComputeReport, ReportedSchedules) {
  auto r = cli("compute-report --backbone resnet18 --epochs 5,5,30,280 --json");
  ASSERT_EQ(r.code, 0);
  auto j = last_json_line(r.out);
  EXPECT_NEAR(100 * j["overall_computation_parameter_updates"].get<double>(), 89.3, 1.5);
  EXPECT_EQ(j["stages"].size(), 4u);

  r = cli("compute-report --backbone vit-b16 --epochs 3,22 --num-classes 10 --json");
  ASSERT_EQ(r.code, 0);
  EXPECT_NEAR(100 * last_json_line(r.out)["overall_computation_parameter_updates"].get<double>(), 94.1, 1.5);
}

TEST(CliComputeReport, StageMismatchIsConfigError) {
  EXPECT_EQ(cli("compute-report --backbone vit-b16 --epochs 3,22 --stages 3").code, 2);
  EXPECT_EQ(cli("compute-report --backbone resnet18 --epochs 1,1,1,1,1,1,1,1,1").code, 2);
  EXPECT_EQ(cli("compute-report --backbone resnet18 --epochs 5,0").code, 2);
}

TEST(CliConfig, ParseErrorsAndHelp) {
  EXPECT_EQ(cli("--help").code, 0);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("--no-such-flag 1 partition").code, 2);
  EXPECT_EQ(cli("--mode sideways train").code, 2);
  EXPECT_NE(last_stderr().find("mode"), std::string::npos);
  EXPECT_EQ(cli("--stages 3 --epochs 1,1 train").code, 2);
  EXPECT_EQ(cli("--mode paired --epochs 1,1 --entire-epochs 3 train").code, 2);

  TempDir dir("badcfg");
  std::ofstream(dir.path / "bad.ini") << "batch_size = 8\n";
  EXPECT_EQ(cli("--config " + (dir.path / "bad.ini").string() + " partition").code, 2);
}

TEST(CliConfig, FileValuesAndCommandLineOverride) {
  TempDir dir("cfg");
  std::ofstream(dir.path / "run.ini") << "mode = progressive\nepochs = 1,2\nimage-size = 32\nseed = 7\nlr = 0.02\n";
  const auto out = dir.path / "run";
  auto r = cli("-q --config " + (dir.path / "run.ini").string() + " --epochs 1,1 --out " + out.string() + " train");
  ASSERT_EQ(r.code, 0) << last_stderr();
  const auto rep = read_json(out / "progressive" / "report.json");
  EXPECT_EQ(rep["config"]["epochs"], json({1, 1}));
  EXPECT_EQ(rep["config"]["seed"], 7);
  EXPECT_DOUBLE_EQ(rep["config"]["lr"].get<double>(), 0.02);
  EXPECT_EQ(rep["config"]["image_size"], 32);
  EXPECT_TRUE(rep.contains("config_hash"));
}

TEST(CliTrain, EvalReproducesReportedTestMetrics) {
  TempDir dir("train");
  const auto out = dir.path / "run";
  auto r = cli(kTiny + " --mode paired --out " + out.string() + " train");
  ASSERT_EQ(r.code, 0) << last_stderr();
  for (const char* f : {"comparison.csv", "comparison.md", "paired.json", "progressive/epochs.csv", "progressive/confusion_test.csv",
                        "entire/checkpoints/stage1.ckpt", "progressive/checkpoints/stage1.ckpt", "progressive/checkpoints/stage2.ckpt"})
    EXPECT_TRUE(fs::exists(out / f)) << f;

  const auto rep = read_json(out / "progressive" / "report.json");
  EXPECT_EQ(rep["mode"], "progressive");
  EXPECT_LT(rep["compute"]["overall_computation_parameter_updates"].get<double>(), 1.0);
  const auto ent = read_json(out / "entire" / "report.json");
  EXPECT_EQ(ent["compute"]["overall_computation_parameter_updates"].get<double>(), 1.0);

  const auto eval_json = dir.path / "eval.json";
  r = cli("--image-size 32 eval --checkpoint " + (out / "progressive/checkpoints/stage2.ckpt").string() + " --report " + eval_json.string());
  ASSERT_EQ(r.code, 0) << last_stderr();
  const auto ev = read_json(eval_json);
  EXPECT_DOUBLE_EQ(ev["metrics"]["accuracy"].get<double>(), rep["final"]["test"]["accuracy"].get<double>());
  EXPECT_EQ(ev["metrics"]["confusion_matrix"], rep["final"]["test"]["confusion_matrix"]);
  EXPECT_EQ(ev["weights_hash"], rep["provenance"]["final_weights_hash"]);
  EXPECT_EQ(ev["weights_hash"], rep["stages"][1]["checkpoint_weights_hash"]);
}

TEST(CliTrain, CheckpointMismatchAndDataErrors) {
  TempDir dir("mismatch");
  const auto out = dir.path / "run";
  ASSERT_EQ(cli(kTiny + " --out " + out.string() + " train").code, 0) << last_stderr();
  const auto ck = (out / "progressive/checkpoints/stage2.ckpt").string();

  // two-class folder dataset against a five-class checkpoint
  const auto imgs = dir.path / "imgs";
  for (const std::string cls : {"a", "b"}) {
    fs::create_directories(imgs / cls);
    for (int i = 0; i < 10; ++i)
      std::ofstream(imgs / cls / ("x" + std::to_string(i) + ".pgm"), std::ios::binary) << "P5\n32 32\n255\n" << std::string(1024, 'a');
  }
  EXPECT_EQ(cli("--dataset folder --data-dir " + imgs.string() + " --image-size 32 eval --checkpoint " + ck).code, 5);
  EXPECT_NE(last_stderr().find("5 classes"), std::string::npos) << last_stderr();
  EXPECT_EQ(cli("--image-size 48 eval --checkpoint " + ck).code, 5);

  {
    std::ofstream(dir.path / "junk.ckpt") << "not a checkpoint";
  }
  EXPECT_EQ(cli("--image-size 32 eval --checkpoint " + (dir.path / "junk.ckpt").string()).code, 5);
  EXPECT_EQ(cli("--image-size 32 eval --checkpoint " + (dir.path / "none.ckpt").string()).code, 5);

  EXPECT_EQ(cli("--dataset folder --data-dir " + (dir.path / "missing").string() + " train").code, 3);
  EXPECT_EQ(cli("--dataset cifar10 --data-dir " + (dir.path / "missing").string() + " train").code, 3);
}

TEST(CliTrain, DivergenceIsTrainingFailure) {
  TempDir dir("diverge");
  const auto out = dir.path / "run";
  EXPECT_EQ(cli(kTiny + " --lr 1e30 --out " + out.string() + " train").code, 4);
  EXPECT_NE(last_stderr().find("non-finite"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "progressive" / "partial_report.json"));
}

TEST(CliTrain, SameSeedSameReport) {
  TempDir dir("det");
  ASSERT_EQ(cli(kTiny + " --seed 5 --out " + (dir.path / "a").string() + " train").code, 0);
  ASSERT_EQ(cli(kTiny + " --seed 5 --out " + (dir.path / "b").string() + " train").code, 0);
  ASSERT_EQ(cli(kTiny + " --seed 6 --out " + (dir.path / "c").string() + " train").code, 0);
  auto strip = [&](const char* run) {
    auto j = progrow::strip_timing(read_json(dir.path / run / "progressive" / "report.json"));
    j["config"].erase("out");
    for (auto& st : j["stages"]) st.erase("checkpoint_path");
    return j;
  };
  EXPECT_EQ(strip("a").dump(), strip("b").dump());
  EXPECT_NE(strip("a")["provenance"]["final_weights_hash"], strip("c")["provenance"]["final_weights_hash"]);
}

TEST(CliSweep, ChildRunsPerSeedAndSummary) {
  TempDir dir("sweep");
  auto r = cli(kTiny + " --out " + dir.path.string() + " sweep --seeds 3,4");
  ASSERT_EQ(r.code, 0) << last_stderr();
  const auto s = read_json(dir.path / "sweep.json");
  ASSERT_EQ(s["runs"].size(), 2u);
  EXPECT_EQ(s["runs"][1]["seed"], 4);
  EXPECT_EQ(s["aggregate"]["progressive"]["runs"], 2);
  const auto rep = read_json(dir.path / "seed_4" / "progressive" / "report.json");
  EXPECT_EQ(rep["config"]["seed"], 4);
  EXPECT_DOUBLE_EQ(s["runs"][1]["progressive"]["accuracy"].get<double>(), rep["final"]["test"]["accuracy"].get<double>());
}
