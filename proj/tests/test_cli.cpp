#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <regex>

#include "nfsm/nfsm.hpp"
#include "test_util.hpp"

using namespace nfsm;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run_cli(const std::filesystem::path& dir, const std::string& args, const std::string& env = "") {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" + NFSM_CLI_PATH + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_file(out);
  r.err = io::read_file(err);
  return r;
}

// Small dataset plus a run config with a 4/2 split and a tiny model.
void tiny_setup(const std::filesystem::path& dir) {
  generate_dataset(test_util::tiny_spec(), 6, 300, dir / "ds", 60);
  io::write_file(dir / "run.json", R"({
  "dataset": "ds/manifest.json",
  "num_train": 4,
  "output_dir": "out",
  "model": {"n": 4, "m": 2, "d": 4},
  "train": {"epochs_stage1": 1, "epochs_stage2": 1, "stage2_learning_rate": 0.001, "batch_size": 16}
})");
}

std::string last_token(const std::string& line) {
  auto s = line;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s.substr(s.rfind(' ') + 1);
}

}  // namespace

TEST(Cli, GenDataDefaultsToFiftyVideos) {
  test_util::TempDir dir;
  const auto r = run_cli(dir.path, "gen-data --out ds --max-frames 30");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_dataset(dir.path / "ds" / "manifest.json").videos.size(), 50u);
  EXPECT_NE(r.out.find("manifest.json"), std::string::npos);
}

TEST(Cli, GenDataWithZeroVideosSucceeds) {
  test_util::TempDir dir;
  const auto r = run_cli(dir.path, "gen-data --out empty --n-videos 0");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(load_dataset(dir.path / "empty" / "manifest.json").videos.empty());
}

TEST(Cli, UnknownSpecKeyIsAConfigError) {
  test_util::TempDir dir;
  auto j = spec_to_json(test_util::tiny_spec());
  j["dwel_min"] = 3;
  io::write_file(dir.path / "spec.json", j.dump(2));
  const auto r = run_cli(dir.path, "gen-data --spec spec.json --out ds --n-videos 2");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nfsm-error: config:"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("dwel_min"), std::string::npos) << r.err;
}

TEST(Cli, MissingSubcommandOrFlagFails) {
  test_util::TempDir dir;
  EXPECT_NE(run_cli(dir.path, "").code, 0);
  EXPECT_NE(run_cli(dir.path, "train").code, 0);
  const auto r = run_cli(dir.path, "eval --checkpoint nowhere.ckpt --dataset x --out o");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nfsm-error: file:"), std::string::npos) << r.err;
}

TEST(Cli, TrainPrintsReproducibleHash) {
  test_util::TempDir dir;
  tiny_setup(dir.path);
  const auto a = run_cli(dir.path, "train --config run.json --out a");
  const auto b = run_cli(dir.path, "train --config run.json --out b");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_TRUE(std::regex_search(a.out, std::regex("^checkpoint .*model\\.ckpt [0-9a-f]{16}\\n$"))) << a.out;
  EXPECT_EQ(last_token(a.out), last_token(b.out));
  EXPECT_EQ(io::read_file(dir.path / "a" / "model.ckpt"), io::read_file(dir.path / "b" / "model.ckpt"));
  EXPECT_EQ(last_token(a.out), checkpoint_hash(load_checkpoint(dir.path / "a" / "model.ckpt")));
  const auto log = io::read_file(dir.path / "a" / "train_log.tsv");
  EXPECT_TRUE(log.starts_with("stage\tepoch\tstep\tL_c\tL_trans\ttotal\n"));
  const auto c = run_cli(dir.path, "train --config run.json --out c --alpha 0.5");
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(last_token(c.out), last_token(a.out));
}

TEST(Cli, EvalWritesReportsAndHonoursRegime) {
  test_util::TempDir dir;
  tiny_setup(dir.path);
  ASSERT_EQ(run_cli(dir.path, "train --config run.json").code, 0);
  auto r = run_cli(dir.path, "eval --checkpoint out/model.ckpt --config run.json --regime per_video --out ev");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = io::json::parse(io::read_file(dir.path / "ev" / "report.json"));
  EXPECT_EQ(j.at("regime"), "per_video");
  EXPECT_EQ(j.at("num_videos"), 2);
  EXPECT_NE(r.out.find("regime: per_video"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir.path / "ev" / "transition_tables.txt"));
  const auto preds = read_predictions(dir.path / "ev" / "predictions_C.tsv");
  EXPECT_EQ(preds.source, "C");

  r = run_cli(dir.path, "eval --checkpoint out/stage1.ckpt --config run.json --source B --out bad");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nfsm-error: config:"), std::string::npos) << r.err;
  r = run_cli(dir.path, "eval --checkpoint out/stage1.ckpt --config run.json --source A --out ok");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(std::filesystem::exists(dir.path / "ok" / "transition_tables.txt"));
}

TEST(Cli, InferAndPlot) {
  test_util::TempDir dir;
  tiny_setup(dir.path);
  ASSERT_EQ(run_cli(dir.path, "train --config run.json").code, 0);
  ASSERT_EQ(run_cli(dir.path, "infer --checkpoint out/model.ckpt --config run.json --source A --out a.tsv").code, 0);
  ASSERT_EQ(run_cli(dir.path, "infer --checkpoint out/model.ckpt --config run.json --source C --out c.tsv").code, 0);
  ASSERT_EQ(run_cli(dir.path, "infer --checkpoint out/model.ckpt --config run.json --skip 3 --out other.tsv").code, 0);
  const auto ds = load_dataset(dir.path / "ds" / "manifest.json");
  EXPECT_EQ(read_predictions(dir.path / "a.tsv").records.size(), ds.videos[4].size() + ds.videos[5].size());

  auto r = run_cli(dir.path, "plot a.tsv c.tsv --out t.svg");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto svg = io::read_file(dir.path / "t.svg");
  EXPECT_NE(svg.find("source A (online)"), std::string::npos);
  EXPECT_NE(svg.find("source C (online)"), std::string::npos);

  r = run_cli(dir.path, "plot c.tsv --gt-only --out gt.svg");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto gt = io::read_file(dir.path / "gt.svg");
  EXPECT_NE(gt.find("ground truth"), std::string::npos);
  EXPECT_EQ(gt.find("source C"), std::string::npos);

  r = run_cli(dir.path, "plot a.tsv other.tsv --out bad.svg");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nfsm-error: argument:"), std::string::npos) << r.err;
  r = run_cli(dir.path, "plot a.tsv --video nope --out bad.svg");
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, AblateWritesLadderUnderOutputRoot) {
  test_util::TempDir dir;
  tiny_setup(dir.path);
  const auto root = dir.path / "root";
  const auto r = run_cli(dir.path, "ablate --config run.json", "NFSM_OUTPUT_ROOT='" + root.string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"stage1.ckpt", "finetune.ckpt", "freeze.ckpt", "train_log.tsv", "ablation.txt", "ablation.json",
                        "predictions_A.tsv", "predictions_freeze-C.tsv"})
    EXPECT_TRUE(std::filesystem::exists(root / "out" / f)) << f;
  EXPECT_FALSE(std::filesystem::exists(dir.path / "out"));
  EXPECT_EQ(io::read_file(root / "out" / "ablation.txt"), r.out);
  EXPECT_EQ(io::json::parse(io::read_file(root / "out" / "ablation.json")).at("rows").size(), 5u);
}
