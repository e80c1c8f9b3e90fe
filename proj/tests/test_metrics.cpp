#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "nfsm/metrics.hpp"

using namespace nfsm;

namespace {

VideoResult video(std::string id, std::vector<std::size_t> gt, std::vector<std::size_t> pred, std::size_t s = 2) {
  VideoResult v{std::move(id), std::move(gt), std::move(pred), {}};
  for (auto p : v.predicted) {
    Distribution d(s, 0.1 / static_cast<double>(s - 1));
    d[p] = 0.9;
    v.probs.push_back(d);
  }
  return v;
}

std::vector<VideoResult> random_videos(std::mt19937_64& rng, std::size_t count, std::size_t s) {
  std::uniform_int_distribution<std::size_t> len(5, 40), lab(0, s - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<VideoResult> out;
  for (std::size_t i = 0; i < count; ++i) {
    VideoResult v;
    v.video_id = "v" + std::to_string(i);
    const auto n = len(rng);
    for (std::size_t t = 0; t < n; ++t) {
      v.labels.push_back(lab(rng));
      Distribution d(s);
      double z = 0;
      for (auto& x : d) z += x = u(rng);
      for (auto& x : d) x /= z;
      v.predicted.push_back(static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin()));
      v.probs.push_back(d);
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

TEST(VideoAccuracy, HandFixtures) {
  auto r = video_accuracy({video("a", {0, 1}, {0, 1})});
  EXPECT_EQ(r.mean, 100.0);
  EXPECT_EQ(r.std, 0.0);
  r = video_accuracy({video("a", {0, 1}, {0, 1}), video("b", {0, 1}, {0, 0})});
  EXPECT_EQ(r.mean, 75.0);
  EXPECT_EQ(r.std, 25.0);
  EXPECT_THROW(video_accuracy({video("e", {}, {})}), ArgumentError);
  EXPECT_THROW(video_accuracy({}), ArgumentError);
}

TEST(PhaseMetrics, HandConfusionFixture) {
  const auto m = phase_metrics_concat({video("a", {0, 0, 1, 1}, {0, 1, 1, 1})}, 2);
  ASSERT_TRUE(m.per_phase[0] && m.per_phase[1]);
  EXPECT_EQ(m.per_phase[0]->precision, 1.0);
  EXPECT_EQ(m.per_phase[0]->recall, 0.5);
  EXPECT_EQ(m.per_phase[0]->jaccard, 0.5);
  EXPECT_DOUBLE_EQ(m.per_phase[1]->precision, 2.0 / 3.0);
  EXPECT_EQ(m.per_phase[1]->recall, 1.0);
  EXPECT_DOUBLE_EQ(m.per_phase[1]->jaccard, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.per_phase[1]->f1, 0.8);
}

TEST(PhaseMetrics, RelabelingPermutesScores) {
  const auto a = phase_metrics_concat({video("a", {0, 0, 1, 1}, {0, 1, 1, 1})}, 2);
  const auto b = phase_metrics_concat({video("a", {1, 1, 0, 0}, {1, 0, 0, 0})}, 2);
  EXPECT_EQ(a.per_phase[0]->precision, b.per_phase[1]->precision);
  EXPECT_EQ(a.per_phase[1]->jaccard, b.per_phase[0]->jaccard);
  EXPECT_EQ(a.macro.f1, b.macro.f1);
}

TEST(PhaseMetrics, PerfectPredictionsScoreOne) {
  std::vector<VideoResult> v{video("a", {0, 1, 2}, {0, 1, 2}, 4), video("b", {2, 2}, {2, 2}, 4)};
  for (auto m : {phase_metrics_concat(v, 4), phase_metrics_per_video(v, 4)}) {
    EXPECT_EQ(m.macro.precision, 1.0);
    EXPECT_EQ(m.macro.recall, 1.0);
    EXPECT_EQ(m.macro.jaccard, 1.0);
    EXPECT_FALSE(m.per_phase[3]);  // absent everywhere
  }
}

TEST(PhaseMetrics, TwoVideoPerVideoFixture) {
  // video a: GT [0,0,1,1] pred [0,1,1,1] -> P(0)=1 R(0)=.5, P(1)=2/3 R(1)=1
  // video b: GT [1,1,1] pred [1,0,1]     -> phase 1 only: P=1, R=2/3
  std::vector<VideoResult> v{video("a", {0, 0, 1, 1}, {0, 1, 1, 1}), video("b", {1, 1, 1}, {1, 0, 1})};
  const auto m = phase_metrics_per_video(v, 2);
  const double pa = (1.0 + 2.0 / 3.0) / 2.0, pb = 1.0;
  const double ra = (0.5 + 1.0) / 2.0, rb = 2.0 / 3.0;
  EXPECT_DOUBLE_EQ(m.macro.precision, (pa + pb) / 2.0);
  EXPECT_DOUBLE_EQ(m.macro.recall, (ra + rb) / 2.0);
  EXPECT_DOUBLE_EQ(m.per_phase[1]->recall, (1.0 + 2.0 / 3.0) / 2.0);
  // concat: phase 0 tp=1 fp=1 fn=1; phase 1 tp=4 fp=1 fn=1
  const auto c = phase_metrics_concat(v, 2);
  EXPECT_DOUBLE_EQ(c.per_phase[0]->precision, 0.5);
  EXPECT_DOUBLE_EQ(c.per_phase[1]->precision, 0.8);
  EXPECT_DOUBLE_EQ(c.per_phase[1]->jaccard, 4.0 / 6.0);
}

TEST(PhaseMetrics, PredictedOnlyPhaseListedButNotAveraged) {
  const auto m = phase_metrics_concat({video("a", {0, 0, 0}, {0, 2, 0}, 3)}, 3);
  ASSERT_TRUE(m.per_phase[2]);
  EXPECT_EQ(m.per_phase[2]->precision, 0.0);
  EXPECT_DOUBLE_EQ(m.macro.precision, 1.0);
  EXPECT_DOUBLE_EQ(m.macro.recall, 2.0 / 3.0);
}

TEST(PhaseMetrics, RegimesAgreeOnSingleVideoWithAllPhases) {
  std::vector<VideoResult> v{video("a", {0, 1, 2, 2, 1, 0, 0}, {0, 2, 2, 1, 1, 0, 1}, 3)};
  const auto a = phase_metrics_concat(v, 3), b = phase_metrics_per_video(v, 3);
  EXPECT_EQ(a.macro.precision, b.macro.precision);
  EXPECT_EQ(a.macro.recall, b.macro.recall);
  EXPECT_EQ(a.macro.jaccard, b.macro.jaccard);
  EXPECT_EQ(a.macro.f1, b.macro.f1);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(a.per_phase[k]->jaccard, b.per_phase[k]->jaccard);
}

TEST(PhaseMetrics, RandomInvariants) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    auto v = random_videos(rng, 4, 5);
    for (auto m : {phase_metrics_concat(v, 5), phase_metrics_per_video(v, 5)})
      for (const auto& p : m.per_phase) {
        if (!p) continue;
        EXPECT_LE(p->jaccard, std::min(p->precision, p->recall) + 1e-15);
        EXPECT_GE(p->f1 + 1e-15, p->jaccard);  // F1 = 2J/(1+J) per video
      }
    // F1 is the harmonic mean of P and R only for pooled counts; the
    // per-video regime averages per-video F1 values instead.
    for (const auto& p : phase_metrics_concat(v, 5).per_phase) {
      if (!p) continue;
      const double f1 = p->precision + p->recall > 0 ? 2 * p->precision * p->recall / (p->precision + p->recall) : 0;
      EXPECT_DOUBLE_EQ(p->f1, f1);
    }
  }
}

TEST(AveragePrecision, HandRanking) {
  EXPECT_DOUBLE_EQ(average_precision({true, false, true, false}), 5.0 / 6.0);
  EXPECT_EQ(average_precision({false, false}), 0.0);
  EXPECT_EQ(average_precision({true, true, false}), 1.0);
}

TEST(MeanAveragePrecision, PerfectRankingAndTieBreak) {
  std::vector<VideoResult> v{video("a", {0, 1, 1, 0}, {0, 1, 1, 0})};
  EXPECT_EQ(mean_average_precision(v, 2).map, 1.0);
  // All scores tied: ranking falls back to (video, frame) order.
  VideoResult tie{"a", {1, 0, 1, 0}, {0, 0, 0, 0}, std::vector<Distribution>(4, Distribution{0.5, 0.5})};
  const auto r = mean_average_precision({tie}, 2);
  EXPECT_DOUBLE_EQ(*r.per_phase[1], 5.0 / 6.0);  // positives at ranks 1 and 3
  EXPECT_DOUBLE_EQ(*r.per_phase[0], (1.0 / 2.0 + 2.0 / 4.0) / 2.0);
}

TEST(MeanAveragePrecision, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = random_videos(rng, 3, 4);
    const double base = mean_average_precision(v, 4).map;
    for (auto& vid : v)
      for (auto& d : vid.probs)
        for (auto& x : d) x = std::pow(x, 3.0) * 0.5 + 0.1;
    EXPECT_EQ(mean_average_precision(v, 4).map, base);
  }
}

TEST(MeanAveragePrecision, RequiresConfidences) {
  VideoResult v{"a", {0}, {0}, {}};
  EXPECT_THROW(mean_average_precision({v}, 2), ArgumentError);
}

TEST(Fragmentation, HandFixtures) {
  EXPECT_EQ(fragmentation({video("a", {0, 0, 1}, {0, 0, 1})}), 1.0);
  EXPECT_EQ(fragmentation({video("a", {0, 0, 0}, {0, 1, 0})}), 3.0);
  EXPECT_EQ(count_runs({0, 0, 1, 1, 0}), 3u);
  EXPECT_EQ(count_runs({}), 0u);
  EXPECT_THROW(fragmentation({}), ArgumentError);
}

TEST(Evaluate, ReportInvariantToVideoOrder) {
  std::mt19937_64 rng(29);
  for (auto regime : {Regime::Concat, Regime::PerVideo}) {
    auto v = random_videos(rng, 6, 4);
    const auto a = report_json(evaluate(v, 4, regime));
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_EQ(report_json(evaluate(v, 4, regime)), a);
  }
}

TEST(Evaluate, ReportCarriesRegimeAndFields) {
  std::vector<VideoResult> v{video("a", {0, 0, 1, 1}, {0, 1, 1, 1})};
  const auto r = evaluate(v, 2, Regime::PerVideo);
  EXPECT_EQ(r.regime, Regime::PerVideo);
  const auto j = io::json::parse(report_json(r));
  EXPECT_EQ(j.at("regime"), "per_video");
  EXPECT_EQ(j.at("num_frames"), 4);
  EXPECT_DOUBLE_EQ(j.at("fragmentation_ratio").get<double>(), 1.0);
  EXPECT_NE(report_text(r).find("regime: per_video"), std::string::npos);
  EXPECT_THROW(parse_regime("macro"), ConfigError);
}
