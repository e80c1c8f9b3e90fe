#include <gtest/gtest.h>

#include <cstdlib>
#include <regex>
#include <stack>

#include "nfsm/nfsm.hpp"
#include "test_util.hpp"

using namespace nfsm;

namespace {

// Minimal well-formedness check: balanced tags, quoted attributes, known
// entities only.
bool well_formed_xml(const std::string& s, std::string& why) {
  std::stack<std::string> open;
  std::size_t i = 0;
  bool root_seen = false;
  while (i < s.size()) {
    if (s[i] == '&') {
      static const std::regex ent("&(amp|lt|gt|quot|apos);");
      if (!std::regex_search(s.begin() + static_cast<long>(i), s.end(), ent, std::regex_constants::match_continuous)) {
        why = "bad entity at " + std::to_string(i);
        return false;
      }
      ++i;
      continue;
    }
    if (s[i] != '<') {
      if (open.empty() && !std::isspace(static_cast<unsigned char>(s[i]))) {
        why = "text outside root";
        return false;
      }
      ++i;
      continue;
    }
    const auto close = s.find('>', i);
    if (close == std::string::npos) {
      why = "unterminated tag";
      return false;
    }
    std::string tag = s.substr(i + 1, close - i - 1);
    i = close + 1;
    if (tag.starts_with("?")) continue;
    if (std::count(tag.begin(), tag.end(), '"') % 2) {
      why = "unbalanced quotes in <" + tag + ">";
      return false;
    }
    if (tag.starts_with("/")) {
      if (open.empty() || open.top() != tag.substr(1)) {
        why = "mismatched </" + tag.substr(1) + ">";
        return false;
      }
      open.pop();
      continue;
    }
    const bool self_closing = tag.ends_with("/");
    const std::string name = tag.substr(0, tag.find_first_of(" /"));
    if (open.empty()) {
      if (root_seen) {
        why = "second root element";
        return false;
      }
      root_seen = true;
    }
    if (!self_closing) open.push(name);
  }
  if (!open.empty()) why = "unclosed <" + open.top() + ">";
  return open.empty() && root_seen;
}

std::vector<std::string> ribbon_paths(const std::string& svg) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = svg.find("<g class=\"ribbon\"", pos)) != std::string::npos) {
    const auto end = svg.find("</g>", pos);
    std::string body = svg.substr(svg.find('>', pos) + 1, end - svg.find('>', pos) - 1);
    out.push_back(body);
    pos = end;
  }
  return out;
}

std::size_t count_substr(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(Plot, GroundTruthRibbonHasOneSegmentPerRun) {
  std::vector<std::size_t> gt{0, 0, 3, 3, 3, 1, 1, 0, 9};
  const auto svg = render_timeline_svg({{"ground truth", gt}});
  const auto ribbons = ribbon_paths(svg);
  ASSERT_EQ(ribbons.size(), 1u);
  EXPECT_EQ(count_substr(ribbons[0], "<path"), count_runs(gt));
  EXPECT_NE(svg.find(kPhasePalette[9 % 8]), std::string::npos);
}

TEST(Plot, IdenticalInputsGiveIdenticalPathData) {
  std::vector<std::size_t> a{0, 1, 1, 2, 2, 2, 0};
  const auto ribbons = ribbon_paths(render_timeline_svg({{"x", a}, {"y", a}}));
  ASSERT_EQ(ribbons.size(), 2u);
  EXPECT_EQ(ribbons[0], ribbons[1]);
}

TEST(Plot, OutputIsWellFormedXml) {
  std::string why;
  const auto svg = render_timeline_svg({{"a <&> \"b\"", {0, 1, 2, 3, 4, 5, 6, 7}}, {"c", {7, 6, 5, 4, 3, 2, 1, 0}}},
                                       "video & co");
  EXPECT_TRUE(well_formed_xml(svg, why)) << why;
  EXPECT_FALSE(well_formed_xml("<svg><g></svg></g>", why));
}

TEST(Plot, RejectsMismatchedOrEmptyInput) {
  EXPECT_THROW(render_timeline_svg({}), ArgumentError);
  EXPECT_THROW(render_timeline_svg({{"a", {0, 1}}, {"b", {0}}}), ArgumentError);
  EXPECT_THROW(render_timeline_svg({{"a", {}}}), ArgumentError);
}

TEST(RunConfigTest, StrictKeysAndDefaults) {
  test_util::TempDir dir;
  io::write_file(dir.path / "run.json", R"({"dataset": "ds/manifest.json", "num_train": 3, "train": {"alpha": 0.5}})");
  const auto rc = load_run_config(dir.path / "run.json");
  EXPECT_EQ(rc.dataset, dir.path / "ds/manifest.json");
  EXPECT_EQ(rc.num_train, 3u);
  EXPECT_EQ(rc.train.alpha, 0.5);
  EXPECT_EQ(rc.model.alpha, 0.5);
  EXPECT_EQ(rc.mode, Mode::Online);
  io::write_file(dir.path / "typo.json", R"({"dataset": "x", "num_train": 3, "train": {"lerning_rate": 1}})");
  try {
    load_run_config(dir.path / "typo.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lerning_rate"), std::string::npos);
  }
}

TEST(RunConfigTest, ModelShapeReconciledWithDataset) {
  test_util::TempDir dir;
  generate_dataset(test_util::tiny_spec(), 3, 1, dir.path / "ds", 50);
  io::write_file(dir.path / "ok.json", R"({"dataset": "ds/manifest.json", "num_train": 2, "model": {"n": 4}})");
  Split split;
  const auto rc = load_run_config_with_data(dir.path / "ok.json", split);
  EXPECT_EQ(rc.model.s, 3u);
  EXPECT_EQ(rc.model.feat_dim, 4u);
  EXPECT_EQ(split.train.size(), 2u);
  EXPECT_EQ(split.test.size(), 1u);
  io::write_file(dir.path / "bad.json", R"({"dataset": "ds/manifest.json", "num_train": 2, "model": {"s": 5}})");
  EXPECT_THROW(load_run_config_with_data(dir.path / "bad.json", split), ConfigError);
  io::write_file(dir.path / "many.json", R"({"dataset": "ds/manifest.json", "num_train": 9})");
  EXPECT_THROW(load_run_config_with_data(dir.path / "many.json", split), ConfigError);
}

TEST(Evaluation, SourceNeedsHeads) {
  auto c = test_util::tiny_spec_config();
  std::mt19937_64 rng(0);
  Checkpoint base = to_checkpoint(init_baseline_model(c, rng), 0, "");
  auto vids = test_util::tiny_videos(1);
  EXPECT_THROW(evaluate_checkpoint(base, vids, Mode::Online, Source::C, Regime::Concat), ConfigError);
  EXPECT_NO_THROW(evaluate_checkpoint(base, vids, Mode::Online, Source::A, Regime::Concat));
}

TEST(Ablation, LadderHasFiveRowsAndZeroBaseDelta) {
  auto c = test_util::tiny_spec_config();
  TrainConfig tc;
  tc.epochs_stage1 = 2;
  tc.epochs_stage2 = 1;
  tc.stage2_learning_rate = 1e-3;
  const auto r = run_ablation(test_util::tiny_videos(4), test_util::tiny_videos(2, 900), c, tc, Mode::Online, Regime::Concat);
  ASSERT_EQ(r.rows.size(), 5u);
  const std::vector<std::string> names{"A", "B", "C", "freeze-B", "freeze-C"};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(r.rows[i].name, names[i]);
  EXPECT_FALSE(r.stage1.has_nfsm());
  EXPECT_TRUE(r.frozen.has_nfsm());
  // Frozen run keeps the stage-1 backbone and classifier bit for bit.
  for (std::size_t i = 0; i < r.stage1.tensors.size(); ++i) EXPECT_EQ(r.frozen.tensors[i], r.stage1.tensors[i]);
  const auto j = io::json::parse(ablation_json(r.rows));
  for (const auto& [k, v] : j.at("rows")[0].items())
    if (k.ends_with("_delta")) EXPECT_EQ(v.get<double>(), 0.0) << k;
  const auto table = ablation_table(r.rows);
  EXPECT_EQ(count_substr(table, "\n"), 7u);  // regime + header + 5 rows
  EXPECT_NE(table.find("freeze-C"), std::string::npos);
}

// Golden report of a fixed synth-7 fixture checkpoint. Regenerate with
// NFSM_UPDATE_GOLDEN=1 after an intentional change and review the diff.
TEST(Golden, FixtureReportMatchesCommittedBytes) {
  const auto spec = synth7_spec();
  std::vector<VideoSequence> train_v, test_v;
  for (std::uint64_t i = 0; i < 4; ++i) train_v.push_back(sample_video(spec, 1000 + i, 160));
  for (std::uint64_t i = 0; i < 2; ++i) test_v.push_back(sample_video(spec, 5000 + i, 160));
  ModelConfig c;
  c.n = 8;
  c.m = 4;
  c.d = 8;
  TrainConfig tc;
  tc.epochs_stage1 = 2;
  tc.epochs_stage2 = 1;
  tc.stage2_learning_rate = 1e-3;
  const auto ckpt = train(train_v, c, tc).final_ckpt;
  const auto golden = std::filesystem::path(NFSM_SOURCE_DIR) / "tests" / "golden";
  for (auto src : {Source::A, Source::C}) {
    const auto e = evaluate_checkpoint(ckpt, test_v, Mode::Online, src, Regime::Concat);
    const auto json = report_json(e.report), text = report_text(e.report);
    const std::string stem = std::string("fixture_report_") + to_string(src);
    if (const char* up = std::getenv("NFSM_UPDATE_GOLDEN"); up && std::string(up) == "1") {
      io::write_file(golden / (stem + ".json"), json);
      io::write_file(golden / (stem + ".txt"), text);
    }
    EXPECT_EQ(json, io::read_file(golden / (stem + ".json"))) << stem;
    EXPECT_EQ(text, io::read_file(golden / (stem + ".txt"))) << stem;
  }
  if (const char* up = std::getenv("NFSM_UPDATE_GOLDEN"); up && std::string(up) == "1")
    io::write_file(golden / "fixture_checkpoint.hash", checkpoint_hash(ckpt) + "\n");
  EXPECT_EQ(checkpoint_hash(ckpt) + "\n", io::read_file(golden / "fixture_checkpoint.hash"));
}

// Desk-scale direction checks on the shipped synth-7 configuration.
TEST(Synth7, FullModelAtLeastBaselineAndOfflineAtLeastOnline) {
  const auto src = std::filesystem::path(NFSM_SOURCE_DIR) / "configs";
  const auto spec = load_spec(src / "synth7_spec.json");
  auto rc = load_run_config(src / "synth7_train.json");
  std::vector<VideoSequence> train_v, test_v;
  for (std::uint64_t i = 0; i < 50; ++i)
    (i < rc.num_train ? train_v : test_v).push_back(sample_video(spec, 1000 + i, 2000));
  const auto r = train(train_v, rc.model, rc.train);
  const auto a = evaluate_checkpoint(r.stage1, test_v, Mode::Online, Source::A, Regime::Concat).report;
  const auto c = evaluate_checkpoint(r.final_ckpt, test_v, Mode::Online, Source::C, Regime::Concat).report;
  const auto off = evaluate_checkpoint(r.final_ckpt, test_v, Mode::Offline, Source::C, Regime::Concat).report;
  EXPECT_GE(c.map, a.map);
  EXPECT_GE(off.map, c.map);
}
