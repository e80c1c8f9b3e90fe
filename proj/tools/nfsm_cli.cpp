// nfsm: data generation, training, evaluation, inference, plots and the
// ablation ladder from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nfsm/nfsm.hpp"

namespace {

using namespace nfsm;

struct DataSel {
  std::string config;
  std::string dataset;
  std::optional<std::size_t> skip;  // leading (training) videos to leave out
  std::string mode, regime;
};

void add_data_flags(CLI::App* cmd, DataSel& d) {
  cmd->add_option("--config", d.config, "run config; supplies dataset, split, mode and regime defaults");
  cmd->add_option("--dataset", d.dataset, "dataset manifest");
  cmd->add_option("--skip", d.skip, "skip the first N videos (defaults to num_train from --config, else 0)");
  cmd->add_option("--mode", d.mode, "online | offline");
}

struct Selected {
  std::vector<VideoSequence> videos;
  Mode mode = Mode::Online;
  Regime regime = Regime::Concat;
};

Selected select_videos(const DataSel& d) {
  Selected out;
  std::filesystem::path manifest;
  std::size_t skip = 0;
  if (!d.config.empty()) {
    RunConfig rc = load_run_config(d.config);
    manifest = rc.dataset;
    skip = rc.num_train;
    out.mode = rc.mode;
    out.regime = rc.regime;
  }
  if (!d.dataset.empty()) {
    manifest = d.dataset;
    if (d.config.empty()) skip = 0;
  }
  if (manifest.empty()) throw ArgumentError("need --dataset or --config");
  if (d.skip) skip = *d.skip;
  if (!d.mode.empty()) out.mode = parse_mode(d.mode);
  if (!d.regime.empty()) out.regime = parse_regime(d.regime);
  Dataset ds = load_dataset(manifest);
  if (skip >= ds.videos.size() && !ds.videos.empty())
    throw ArgumentError("--skip " + std::to_string(skip) + " leaves no videos (dataset has " +
                        std::to_string(ds.videos.size()) + ")");
  out.videos.assign(ds.videos.begin() + static_cast<std::ptrdiff_t>(std::min(skip, ds.videos.size())), ds.videos.end());
  return out;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir, std::size_t n, std::uint64_t seed,
                 std::size_t max_frames) {
  WorkflowSpec spec = spec_path.empty() ? synth7_spec() : load_spec(spec_path);
  const auto manifest = generate_dataset(spec, n, seed, output_path(out_dir, std::filesystem::current_path()), max_frames);
  // read-back recount
  if (load_dataset(manifest).videos.size() != n) throw FormatError("manifest recount mismatch");
  std::cout << manifest.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config, std::optional<double> alpha, const std::string& out_override) {
  Split split;
  RunConfig rc = load_run_config_with_data(config, split);
  if (alpha) {
    rc.train.alpha = *alpha;
    rc.model.alpha = *alpha;
    validate(rc.train);
  }
  if (!out_override.empty()) rc.output_dir = output_path(out_override, std::filesystem::current_path());
  if (split.train.empty()) throw ConfigError("num_train is 0; nothing to train on");
  TrainResult r = train(split.train, rc.model, rc.train);
  const auto dir = rc.output_dir;
  save_checkpoint(r.stage1, dir / "stage1.ckpt");
  save_checkpoint(r.final_ckpt, dir / "model.ckpt");
  io::write_file(dir / "train_log.tsv", training_log_tsv(r.log));
  std::cout << "checkpoint " << (dir / "model.ckpt").string() << " " << checkpoint_hash(r.final_ckpt) << "\n";
  return 0;
}

void write_eval_outputs(const std::filesystem::path& dir, const Evaluation& e, const Checkpoint& ckpt, Source src) {
  io::write_file(dir / ("predictions_" + std::string(to_string(src)) + ".tsv"), encode_predictions(e.file));
  io::write_file(dir / "report.txt", report_text(e.report));
  io::write_file(dir / "report.json", report_json(e.report));
  if (ckpt.has_nfsm() && src != Source::A)
    io::write_file(dir / "transition_tables.txt", encode_transition_tables(e.predictions, ckpt.config.s));
}

int cmd_eval(const std::string& ckpt_path, const DataSel& d, const std::string& source, const std::string& out_dir) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Selected sel = select_videos(d);
  const Source src = parse_source(source);
  Evaluation e = evaluate_checkpoint(ckpt, sel.videos, sel.mode, src, sel.regime);
  const auto dir = output_path(out_dir, std::filesystem::current_path());
  write_eval_outputs(dir, e, ckpt, src);
  std::cout << report_text(e.report);
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const DataSel& d, const std::string& source, const std::string& out) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Selected sel = select_videos(d);
  const Source src = parse_source(source);
  if (src != Source::A && !ckpt.has_nfsm())
    throw ConfigError(std::string("source ") + to_string(src) + " needs NFSM heads, checkpoint is stage 1");
  Model m = model_from_checkpoint(ckpt);
  auto preds = predict_videos(m, sel.videos, sel.mode, src);
  check_invariants(preds, nullptr);
  const auto path = output_path(out, std::filesystem::current_path());
  write_predictions(to_prediction_file(preds, sel.mode, src, checkpoint_hash(ckpt), ckpt.config), path);
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_plot(const std::vector<std::string>& files, const std::string& out, std::string video, bool gt_only) {
  if (files.empty()) throw ArgumentError("plot: no prediction files");
  std::vector<PredictionFile> pf;
  for (const auto& f : files) pf.push_back(read_predictions(f));
  auto ids = [](const PredictionFile& f) {
    std::set<std::string> s;
    for (const auto& r : f.records) s.insert(r.video_id);
    return s;
  };
  const auto first_ids = ids(pf[0]);
  for (std::size_t i = 1; i < pf.size(); ++i)
    if (ids(pf[i]) != first_ids) throw ArgumentError("plot: video ids differ between " + files[0] + " and " + files[i]);
  if (first_ids.empty()) throw ArgumentError("plot: " + files[0] + " has no records");
  if (video.empty()) video = pf[0].records.front().video_id;
  if (!first_ids.count(video)) throw ArgumentError("plot: video '" + video + "' not in inputs");

  auto pick = [&](const PredictionFile& f) {
    for (auto& v : group_by_video(f))
      if (v.video_id == video) return v;
    throw ArgumentError("plot: video '" + video + "' not in inputs");
  };
  std::vector<Ribbon> ribbons;
  const VideoResult gt = pick(pf[0]);
  ribbons.push_back({"ground truth", gt.labels});
  if (!gt_only)
    for (std::size_t i = 0; i < pf.size(); ++i) {
      VideoResult v = pick(pf[i]);
      if (v.labels != gt.labels) throw ArgumentError("plot: ground truth differs in " + files[i]);
      ribbons.push_back({"source " + pf[i].source + " (" + pf[i].mode + ")", v.predicted});
    }
  const auto path = output_path(out, std::filesystem::current_path());
  io::write_file(path, render_timeline_svg(ribbons, video));
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& out_override) {
  Split split;
  RunConfig rc = load_run_config_with_data(config, split);
  if (!out_override.empty()) rc.output_dir = output_path(out_override, std::filesystem::current_path());
  if (split.train.empty() || split.test.empty()) throw ConfigError("ablation needs both training and test videos");
  AblationResult r = run_ablation(split.train, split.test, rc.model, rc.train, rc.mode, rc.regime);
  const auto dir = rc.output_dir;
  save_checkpoint(r.stage1, dir / "stage1.ckpt");
  save_checkpoint(r.finetuned, dir / "finetune.ckpt");
  save_checkpoint(r.frozen, dir / "freeze.ckpt");
  io::write_file(dir / "train_log.tsv", training_log_tsv(r.log));
  for (std::size_t i = 0; i < r.rows.size(); ++i)
    io::write_file(dir / ("predictions_" + r.rows[i].name + ".tsv"), encode_predictions(r.evaluations[i].file));
  const std::string table = ablation_table(r.rows);
  io::write_file(dir / "ablation.txt", table);
  io::write_file(dir / "ablation.json", ablation_json(r.rows));
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural finite-state machine for temporal phase recognition"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  std::size_t n_videos = 50, max_frames = 2000;
  std::uint64_t seed = 1000;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic workflow dataset");
  gen->add_option("--spec", spec_path, "workflow spec JSON (default: built-in synth-7)");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--n-videos", n_videos, "number of videos")->capture_default_str();
  gen->add_option("--seed", seed, "base seed")->capture_default_str();
  gen->add_option("--max-frames", max_frames, "per-video frame cap")->capture_default_str();

  std::string config;
  std::optional<double> alpha;
  auto* tr = app.add_subcommand("train", "two-stage training");
  tr->add_option("--config", config, "run config")->required();
  tr->add_option("--alpha", alpha, "override train.alpha");
  tr->add_option("--out", out_dir, "override output_dir");

  std::string ckpt, source = "C";
  DataSel data;
  auto* ev = app.add_subcommand("eval", "inference + metrics");
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  add_data_flags(ev, data);
  ev->add_option("--source", source, "A | B | C")->capture_default_str();
  ev->add_option("--regime", data.regime, "concat | per_video");
  ev->add_option("--out", out_dir, "output directory")->required();

  std::string out_file;
  auto* inf = app.add_subcommand("infer", "write per-frame predictions");
  inf->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  add_data_flags(inf, data);
  inf->add_option("--source", source, "A | B | C")->capture_default_str();
  inf->add_option("--out", out_file, "prediction file")->required();

  std::vector<std::string> files;
  std::string video;
  bool gt_only = false;
  auto* pl = app.add_subcommand("plot", "timeline ribbons as SVG");
  pl->add_option("files", files, "prediction files")->required();
  pl->add_option("--out", out_file, "SVG path")->required();
  pl->add_option("--video", video, "video id (default: first)");
  pl->add_flag("--gt-only", gt_only, "draw only the ground-truth ribbon");

  auto* ab = app.add_subcommand("ablate", "A/B/C x finetune/freeze ladder");
  ab->add_option("--config", config, "run config")->required();
  ab->add_option("--out", out_dir, "override output_dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen_data(spec_path, out_dir, n_videos, seed, max_frames);
    if (*tr) return cmd_train(config, alpha, out_dir);
    if (*ev) return cmd_eval(ckpt, data, source, out_dir);
    if (*inf) return cmd_infer(ckpt, data, source, out_file);
    if (*pl) return cmd_plot(files, out_file, video, gt_only);
    if (*ab) return cmd_ablate(config, out_dir);
  } catch (const nfsm::Error& e) {
    std::cerr << "nfsm-error: " << e.kind() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "nfsm-error: internal: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
