#pragma once

// Unrelaxed phase-recognition metrics. Rates are fractions in [0,1] except
// video accuracy, which is in percent.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nfsm/inference.hpp"
#include "nfsm/io.hpp"

namespace nfsm {

struct VideoResult {
  std::string video_id;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> predicted;
  std::vector<Distribution> probs;  // may be empty when confidences are unavailable
};

enum class Regime { Concat, PerVideo };
inline const char* to_string(Regime r) { return r == Regime::Concat ? "concat" : "per_video"; }
inline Regime parse_regime(const std::string& s) {
  if (s == "concat") return Regime::Concat;
  if (s == "per_video") return Regime::PerVideo;
  throw ConfigError("unknown regime '" + s + "' (expected concat or per_video)");
}

inline std::vector<VideoResult> group_by_video(const PredictionFile& f) {
  std::vector<VideoResult> out;
  for (const auto& r : f.records) {
    if (out.empty() || out.back().video_id != r.video_id) out.push_back({r.video_id, {}, {}, {}});
    auto& v = out.back();
    v.labels.push_back(r.label);
    v.predicted.push_back(r.predicted);
    v.probs.push_back(r.probs);
  }
  return out;
}

inline std::vector<VideoResult> to_results(const std::vector<VideoPredictions>& preds) {
  std::vector<VideoResult> out;
  for (const auto& v : preds) {
    VideoResult r{v.video_id, v.labels, {}, {}};
    for (const auto& f : v.frames) {
      r.predicted.push_back(f.predicted);
      r.probs.push_back(f.p);
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

// Per-video frame accuracy (percent); mean and population std over videos.
inline MeanStd video_accuracy(const std::vector<VideoResult>& videos) {
  if (videos.empty()) throw ArgumentError("video_accuracy: no videos");
  std::vector<double> acc;
  for (const auto& v : videos) {
    if (v.labels.empty()) throw ArgumentError("video_accuracy: video " + v.video_id + " is empty");
    if (v.labels.size() != v.predicted.size()) throw ShapeError("video_accuracy: label/prediction count mismatch");
    std::size_t ok = 0;
    for (std::size_t t = 0; t < v.labels.size(); ++t) ok += v.labels[t] == v.predicted[t];
    acc.push_back(100.0 * static_cast<double>(ok) / static_cast<double>(v.labels.size()));
  }
  std::sort(acc.begin(), acc.end());  // exact invariance to video order
  MeanStd r;
  for (double a : acc) r.mean += a;
  r.mean /= static_cast<double>(acc.size());
  for (double a : acc) r.std += (a - r.mean) * (a - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(acc.size()));
  return r;
}

struct PhaseScores {
  double precision = 0.0, recall = 0.0, jaccard = 0.0, f1 = 0.0;
};

inline double f1_score(double p, double r) { return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

// Scores from confusion counts; a zero denominator yields 0.
inline PhaseScores scores_from_counts(double tp, double fp, double fn) {
  PhaseScores s;
  s.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  s.jaccard = tp + fp + fn > 0 ? tp / (tp + fp + fn) : 0.0;
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

struct PhaseMetrics {
  std::vector<std::optional<PhaseScores>> per_phase;  // nullopt where excluded
  PhaseScores macro;
};

namespace detail {

struct Counts {
  std::vector<double> tp, fp, fn;
  explicit Counts(std::size_t s) : tp(s, 0.0), fp(s, 0.0), fn(s, 0.0) {}
  void add(const VideoResult& v) {
    for (std::size_t t = 0; t < v.labels.size(); ++t) {
      const auto g = v.labels[t], p = v.predicted[t];
      if (g >= tp.size() || p >= tp.size()) throw ArgumentError("phase metrics: label out of range");
      if (g == p) tp[g] += 1;
      else {
        fp[p] += 1;
        fn[g] += 1;
      }
    }
  }
};

// Sums in sorted order so the result does not depend on input order.
inline double sorted_mean(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  double total = 0.0;
  for (double x : xs) total += x;
  return total / static_cast<double>(xs.size());
}

inline PhaseScores mean_scores(const std::vector<PhaseScores>& xs) {
  PhaseScores m;
  if (xs.empty()) return m;
  auto field = [&xs](double PhaseScores::*f) {
    std::vector<double> v;
    for (const auto& x : xs) v.push_back(x.*f);
    return sorted_mean(std::move(v));
  };
  m.precision = field(&PhaseScores::precision);
  m.recall = field(&PhaseScores::recall);
  m.jaccard = field(&PhaseScores::jaccard);
  m.f1 = field(&PhaseScores::f1);
  return m;
}

}  // namespace detail

// Concatenated stream, global confusion counts per phase; macro over phases
// present in the ground truth.
inline PhaseMetrics phase_metrics_concat(const std::vector<VideoResult>& videos, std::size_t s) {
  detail::Counts c(s);
  for (const auto& v : videos) c.add(v);
  PhaseMetrics out;
  out.per_phase.resize(s);
  std::vector<PhaseScores> present;
  for (std::size_t k = 0; k < s; ++k) {
    const bool in_gt = c.tp[k] + c.fn[k] > 0;
    if (!in_gt && c.fp[k] == 0) continue;
    out.per_phase[k] = scores_from_counts(c.tp[k], c.fp[k], c.fn[k]);
    if (in_gt) present.push_back(*out.per_phase[k]);
  }
  out.macro = detail::mean_scores(present);
  return out;
}

// Per video: mean over phases present in that video's ground truth; then
// the mean over videos. Per-phase entries average over videos containing
// that phase.
inline PhaseMetrics phase_metrics_per_video(const std::vector<VideoResult>& videos, std::size_t s) {
  if (videos.empty()) throw ArgumentError("phase_metrics_per_video: no videos");
  std::vector<std::vector<PhaseScores>> by_phase(s);
  std::vector<PhaseScores> video_means;
  for (const auto& v : videos) {
    detail::Counts c(s);
    c.add(v);
    std::vector<PhaseScores> present;
    for (std::size_t k = 0; k < s; ++k) {
      if (c.tp[k] + c.fn[k] == 0) continue;
      auto sc = scores_from_counts(c.tp[k], c.fp[k], c.fn[k]);
      present.push_back(sc);
      by_phase[k].push_back(sc);
    }
    video_means.push_back(detail::mean_scores(present));
  }
  PhaseMetrics out;
  out.per_phase.resize(s);
  for (std::size_t k = 0; k < s; ++k)
    if (!by_phase[k].empty()) out.per_phase[k] = detail::mean_scores(by_phase[k]);
  out.macro = detail::mean_scores(video_means);
  return out;
}

// Average precision of one ranked relevance list (positives at `ranks`).
inline double average_precision(const std::vector<bool>& ranked_relevance) {
  double hits = 0.0, total = 0.0;
  for (std::size_t i = 0; i < ranked_relevance.size(); ++i)
    if (ranked_relevance[i]) {
      hits += 1.0;
      total += hits / static_cast<double>(i + 1);
    }
  return hits > 0 ? total / hits : 0.0;
}

struct MapResult {
  double map = 0.0;
  std::vector<std::optional<double>> per_phase;
};

// Per phase: all frames ranked by p[k] descending, ties by (video_id, frame).
inline MapResult mean_average_precision(const std::vector<VideoResult>& videos, std::size_t s) {
  struct Item {
    const std::string* vid;
    std::size_t frame;
    const Distribution* probs;
    std::size_t label;
  };
  std::vector<Item> items;
  for (const auto& v : videos) {
    if (v.probs.size() != v.labels.size()) throw ArgumentError("mean_average_precision: video " + v.video_id + " lacks confidences");
    for (std::size_t t = 0; t < v.labels.size(); ++t) {
      if (v.probs[t].size() != s) throw ShapeError("mean_average_precision: confidence vector length");
      items.push_back({&v.video_id, t, &v.probs[t], v.labels[t]});
    }
  }
  MapResult r;
  r.per_phase.resize(s);
  std::vector<double> aps;
  for (std::size_t k = 0; k < s; ++k) {
    if (std::none_of(items.begin(), items.end(), [k](const Item& it) { return it.label == k; })) continue;
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double pa = (*items[a].probs)[k], pb = (*items[b].probs)[k];
      if (pa != pb) return pa > pb;
      if (*items[a].vid != *items[b].vid) return *items[a].vid < *items[b].vid;
      return items[a].frame < items[b].frame;
    });
    std::vector<bool> rel;
    rel.reserve(order.size());
    for (auto i : order) rel.push_back(items[i].label == k);
    r.per_phase[k] = average_precision(rel);
    aps.push_back(*r.per_phase[k]);
  }
  for (double a : aps) r.map += a;
  if (!aps.empty()) r.map /= static_cast<double>(aps.size());
  return r;
}

inline std::size_t count_runs(const std::vector<std::size_t>& labels) {
  std::size_t runs = 0;
  for (std::size_t t = 0; t < labels.size(); ++t) runs += (t == 0 || labels[t] != labels[t - 1]);
  return runs;
}

// Predicted segment count over ground-truth segment count, summed over videos.
inline double fragmentation(const std::vector<VideoResult>& videos) {
  if (videos.empty()) throw ArgumentError("fragmentation: no videos");
  std::size_t pred = 0, gt = 0;
  for (const auto& v : videos) {
    pred += count_runs(v.predicted);
    gt += count_runs(v.labels);
  }
  if (gt == 0) throw ArgumentError("fragmentation: no ground-truth frames");
  return static_cast<double>(pred) / static_cast<double>(gt);
}

struct EvalReport {
  Regime regime = Regime::Concat;
  std::size_t num_phases = 0;
  std::size_t num_videos = 0;
  std::size_t num_frames = 0;
  MeanStd video_accuracy;  // percent
  std::vector<std::optional<PhaseScores>> per_phase;  // fractions
  PhaseScores macro;  // fractions
  double map = 0.0;   // fraction
  double fragmentation_ratio = 0.0;
};

inline EvalReport evaluate(const std::vector<VideoResult>& videos, std::size_t s, Regime regime) {
  EvalReport r;
  r.regime = regime;
  r.num_phases = s;
  r.num_videos = videos.size();
  for (const auto& v : videos) r.num_frames += v.labels.size();
  r.video_accuracy = video_accuracy(videos);
  auto pm = regime == Regime::Concat ? phase_metrics_concat(videos, s) : phase_metrics_per_video(videos, s);
  r.per_phase = pm.per_phase;
  r.macro = pm.macro;
  r.map = mean_average_precision(videos, s).map;
  r.fragmentation_ratio = fragmentation(videos);
  return r;
}

inline std::string fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

// Machine-readable report; values are rounded to 9 decimals.
inline std::string report_json(const EvalReport& r) {
  auto num = [](double x) { return io::json::parse(fixed(x, 9)); };
  io::json per = io::json::array();
  for (const auto& p : r.per_phase) {
    if (!p) {
      per.push_back(nullptr);
      continue;
    }
    per.push_back({{"precision", num(p->precision)}, {"recall", num(p->recall)}, {"jaccard", num(p->jaccard)}, {"f1", num(p->f1)}});
  }
  io::json j{{"regime", to_string(r.regime)},
             {"num_phases", r.num_phases},
             {"num_videos", r.num_videos},
             {"num_frames", r.num_frames},
             {"video_accuracy_mean", num(r.video_accuracy.mean)},
             {"video_accuracy_std", num(r.video_accuracy.std)},
             {"precision", num(r.macro.precision)},
             {"recall", num(r.macro.recall)},
             {"jaccard", num(r.macro.jaccard)},
             {"f1", num(r.macro.f1)},
             {"map", num(r.map)},
             {"fragmentation_ratio", num(r.fragmentation_ratio)},
             {"per_phase", per}};
  return j.dump(2) + "\n";
}

// Human-readable report, percentages with one decimal.
inline std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os << "regime: " << to_string(r.regime) << "\n"
     << "videos: " << r.num_videos << "  frames: " << r.num_frames << "\n"
     << "video accuracy: " << fixed(r.video_accuracy.mean, 1) << " +- " << fixed(r.video_accuracy.std, 1) << "\n"
     << "precision: " << fixed(100 * r.macro.precision, 1) << "\n"
     << "recall:    " << fixed(100 * r.macro.recall, 1) << "\n"
     << "jaccard:   " << fixed(100 * r.macro.jaccard, 1) << "\n"
     << "f1:        " << fixed(100 * r.macro.f1, 1) << "\n"
     << "mAP:       " << fixed(100 * r.map, 1) << "\n"
     << "fragmentation: " << fixed(r.fragmentation_ratio, 3) << "\n"
     << "phase  precision  recall  jaccard  f1\n";
  for (std::size_t k = 0; k < r.per_phase.size(); ++k) {
    os << "P" << k;
    if (!r.per_phase[k]) {
      os << "     -\n";
      continue;
    }
    const auto& p = *r.per_phase[k];
    os << "     " << fixed(100 * p.precision, 1) << "     " << fixed(100 * p.recall, 1) << "    "
       << fixed(100 * p.jaccard, 1) << "    " << fixed(100 * p.f1, 1) << "\n";
  }
  return os.str();
}

}  // namespace nfsm
