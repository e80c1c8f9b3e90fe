#pragma once

// Glue for the command-line workflows: run configuration files, dataset
// splits, checkpoint evaluation and the A/B/C ablation ladder.

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "nfsm/config.hpp"
#include "nfsm/inference.hpp"
#include "nfsm/io.hpp"
#include "nfsm/metrics.hpp"
#include "nfsm/training.hpp"
#include "nfsm/workflow_sim.hpp"

namespace nfsm {

namespace fs = std::filesystem;

// Relative output paths resolve against $NFSM_OUTPUT_ROOT when it is set.
inline fs::path output_path(const fs::path& p, const fs::path& base) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("NFSM_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return base / p;
}

struct RunConfig {
  fs::path dataset;  // manifest path
  std::size_t num_train = 0;  // leading videos used for training, the rest for evaluation
  fs::path output_dir;
  ModelConfig model;
  TrainConfig train;
  Mode mode = Mode::Online;
  Regime regime = Regime::Concat;
};

// Strict schema; `model.s` and `model.feat_dim` default to the dataset's.
inline RunConfig parse_run_config(const io::json& j, const fs::path& base, const std::string& where) {
  io::check_keys(j, {"dataset", "num_train", "output_dir", "model", "train", "mode", "regime"}, where);
  RunConfig rc;
  rc.dataset = base / io::get_required<std::string>(j, "dataset", where);
  rc.num_train = io::get_required<std::size_t>(j, "num_train", where);
  rc.output_dir = output_path(io::get_or<std::string>(j, "output_dir", "out", where), base);
  rc.mode = parse_mode(io::get_or<std::string>(j, "mode", "online", where));
  rc.regime = parse_regime(io::get_or<std::string>(j, "regime", "concat", where));
  io::json mj = j.value("model", io::json::object());
  rc.model = model_config_from_json(mj, where + ": model");
  rc.train = train_config_from_json(j.value("train", io::json::object()), where + ": train");
  rc.model.alpha = rc.train.alpha;
  return rc;
}

inline RunConfig load_run_config(const fs::path& path) {
  const auto j = io::parse_json(io::read_file(path), path.string());
  return parse_run_config(j, path.parent_path(), path.string());
}

struct Split {
  Dataset dataset;
  std::vector<VideoSequence> train, test;
};

// Loads the dataset and reconciles the model shape with it.
inline Split load_split(RunConfig& rc, const io::json* raw_model = nullptr) {
  Split s;
  s.dataset = load_dataset(rc.dataset);
  const auto& spec = s.dataset.spec;
  const bool s_given = raw_model && raw_model->contains("s");
  const bool f_given = raw_model && raw_model->contains("feat_dim");
  if (s_given && rc.model.s != spec.num_phases)
    throw ConfigError("model.s = " + std::to_string(rc.model.s) + " but dataset has " + std::to_string(spec.num_phases) + " phases");
  if (f_given && rc.model.feat_dim != spec.feat_dim)
    throw ConfigError("model.feat_dim = " + std::to_string(rc.model.feat_dim) + " but dataset has " + std::to_string(spec.feat_dim));
  rc.model.s = spec.num_phases;
  rc.model.feat_dim = spec.feat_dim;
  validate(rc.model);
  if (rc.num_train > s.dataset.videos.size())
    throw ConfigError("num_train = " + std::to_string(rc.num_train) + " exceeds " + std::to_string(s.dataset.videos.size()) + " videos");
  s.train.assign(s.dataset.videos.begin(), s.dataset.videos.begin() + static_cast<std::ptrdiff_t>(rc.num_train));
  s.test.assign(s.dataset.videos.begin() + static_cast<std::ptrdiff_t>(rc.num_train), s.dataset.videos.end());
  return s;
}

inline RunConfig load_run_config_with_data(const fs::path& path, Split& split) {
  const auto j = io::parse_json(io::read_file(path), path.string());
  RunConfig rc = parse_run_config(j, path.parent_path(), path.string());
  io::json mj = j.value("model", io::json::object());
  split = load_split(rc, &mj);
  return rc;
}

// ---- evaluation -----------------------------------------------------------------

// Fails when a prediction is not a distribution or a report breaks a
// metric identity.
inline void check_invariants(const std::vector<VideoPredictions>& preds, const EvalReport* report) {
  for (const auto& v : preds)
    for (const auto& f : v.frames) {
      double z = 0.0;
      for (double x : f.p) {
        if (!(x >= 0.0)) throw NumericError("prediction has a negative or NaN entry in " + v.video_id);
        z += x;
      }
      if (std::abs(z - 1.0) > 1e-9) throw NumericError("prediction does not sum to 1 in " + v.video_id);
    }
  if (!report) return;
  for (const auto& p : report->per_phase)
    if (p && p->jaccard > std::min(p->precision, p->recall) + 1e-12) throw NumericError("report: jaccard exceeds min(precision, recall)");
  if (!(report->fragmentation_ratio > 0.0)) throw NumericError("report: fragmentation ratio must be positive");
}

struct Evaluation {
  std::vector<VideoPredictions> predictions;
  PredictionFile file;
  EvalReport report;
};

inline Evaluation evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<VideoSequence>& videos, Mode mode,
                                      Source src, Regime regime) {
  if (src != Source::A && !ckpt.has_nfsm())
    throw ConfigError(std::string("source ") + to_string(src) + " needs NFSM heads, checkpoint is stage 1");
  if (videos.empty()) throw ArgumentError("evaluate: no videos");
  Model m = model_from_checkpoint(ckpt);
  Evaluation e;
  e.predictions = predict_videos(m, videos, mode, src);
  e.file = to_prediction_file(e.predictions, mode, src, checkpoint_hash(ckpt), ckpt.config);
  e.report = evaluate(to_results(e.predictions), ckpt.config.s, regime);
  check_invariants(e.predictions, &e.report);
  return e;
}

// ---- ablation ladder ----------------------------------------------------------------

struct AblationRow {
  std::string name;  // A, B, C, freeze-B, freeze-C
  bool frozen = false;
  Source source = Source::A;
  EvalReport report;
};

struct AblationResult {
  Checkpoint stage1, finetuned, frozen;
  std::vector<LogRow> log;
  std::vector<AblationRow> rows;
  std::vector<Evaluation> evaluations;  // parallel to rows
};

// One stage-1 baseline, then NFSM attached twice: fine-tuning everything
// and with the backbone frozen.
inline AblationResult run_ablation(const std::vector<VideoSequence>& train_videos,
                                   const std::vector<VideoSequence>& test_videos, const ModelConfig& cfg,
                                   const TrainConfig& tc, Mode mode, Regime regime) {
  AblationResult r;
  r.stage1 = train_stage1(train_videos, cfg, tc, &r.log);
  TrainConfig ft = tc;
  ft.freeze_backbone = false;
  r.finetuned = train_stage2(r.stage1, train_videos, ft, &r.log);
  TrainConfig fz = tc;
  fz.freeze_backbone = true;
  r.frozen = train_stage2(r.stage1, train_videos, fz, &r.log);
  struct Item {
    const char* name;
    const Checkpoint* ckpt;
    bool frozen;
    Source src;
  };
  for (const Item& it : {Item{"A", &r.stage1, false, Source::A}, Item{"B", &r.finetuned, false, Source::B},
                         Item{"C", &r.finetuned, false, Source::C}, Item{"freeze-B", &r.frozen, true, Source::B},
                         Item{"freeze-C", &r.frozen, true, Source::C}}) {
    r.evaluations.push_back(evaluate_checkpoint(*it.ckpt, test_videos, mode, it.src, regime));
    r.rows.push_back({it.name, it.frozen, it.src, r.evaluations.back().report});
  }
  return r;
}

namespace detail {

inline std::vector<std::pair<std::string, double>> headline(const EvalReport& r) {
  return {{"accuracy", r.video_accuracy.mean},     {"precision", 100 * r.macro.precision},
          {"recall", 100 * r.macro.recall},        {"jaccard", 100 * r.macro.jaccard},
          {"f1", 100 * r.macro.f1},                {"map", 100 * r.map},
          {"fragmentation", r.fragmentation_ratio}};
}

}  // namespace detail

// Table layout: one row per ladder entry, metric (delta vs A).
inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  if (rows.empty()) return {};
  const auto base = detail::headline(rows.front().report);
  std::ostringstream os;
  os << "regime: " << to_string(rows.front().report.regime) << "\n";
  os << "row       backbone  ";
  for (const auto& [k, v] : base) os << k << std::string(k.size() < 18 ? 18 - k.size() : 1, ' ');
  os << "\n";
  for (const auto& row : rows) {
    std::string name = row.name;
    os << name << std::string(10 - std::min<std::size_t>(9, name.size()), ' ') << (row.frozen ? "frozen    " : "finetune  ");
    const auto h = detail::headline(row.report);
    for (std::size_t i = 0; i < h.size(); ++i) {
      const int digits = h[i].first == "fragmentation" ? 3 : 1;
      std::string cell = fixed(h[i].second, digits) + " (" + (h[i].second - base[i].second >= 0 ? "+" : "") +
                         fixed(h[i].second - base[i].second, digits) + ")";
      os << cell << std::string(cell.size() < 18 ? 18 - cell.size() : 1, ' ');
    }
    os << "\n";
  }
  return os.str();
}

inline std::string ablation_json(const std::vector<AblationRow>& rows) {
  io::json arr = io::json::array();
  const auto base = rows.empty() ? decltype(detail::headline(EvalReport{})){} : detail::headline(rows.front().report);
  for (const auto& row : rows) {
    io::json j{{"row", row.name}, {"frozen", row.frozen}, {"source", to_string(row.source)}};
    const auto h = detail::headline(row.report);
    for (std::size_t i = 0; i < h.size(); ++i) {
      j[h[i].first] = io::json::parse(fixed(h[i].second, 9));
      j[h[i].first + "_delta"] = io::json::parse(fixed(h[i].second - base[i].second, 9));
    }
    arr.push_back(j);
  }
  return io::json{{"regime", rows.empty() ? "concat" : to_string(rows.front().report.regime)}, {"rows", arr}}.dump(2) + "\n";
}

inline std::string training_log_tsv(const std::vector<LogRow>& log) {
  std::ostringstream os;
  os << "stage\tepoch\tstep\tL_c\tL_trans\ttotal\n";
  for (const auto& r : log)
    os << r.stage << '\t' << r.epoch << '\t' << r.step << '\t' << fixed(r.losses.current, 9) << '\t'
       << fixed(r.losses.trans, 9) << '\t' << fixed(r.losses.total, 9) << '\n';
  return os.str();
}

}  // namespace nfsm
