#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nfsm/config.hpp"
#include "nfsm/io.hpp"
#include "nfsm/model.hpp"

namespace nfsm {

// ---- losses -------------------------------------------------------------------

inline Tensor one_hot(std::size_t label, std::size_t s) {
  if (label >= s) throw ArgumentError("one_hot: label " + std::to_string(label) + " out of range for " + std::to_string(s) + " phases");
  Tensor t({s});
  t.data()[label] = 1.0;
  return t;
}

inline void check_one_hot(const Tensor& y) {
  std::size_t ones = 0;
  for (double v : y.data()) {
    if (v == 1.0) ++ones;
    else if (v != 0.0) throw ArgumentError("invalid one-hot vector: entry " + std::to_string(v));
  }
  if (ones != 1) throw ArgumentError("invalid one-hot vector: " + std::to_string(ones) + " ones");
}

// Current-frame cross-entropy.
inline Tensor loss_current(const Tensor& p_hat, const Tensor& y) {
  check_one_hot(y);
  return cross_entropy(p_hat, y);
}

// Mean cross-entropy of the n+m transition-state rows against their labels.
inline Tensor loss_trans(const Tensor& probs, std::span<const Tensor> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size())
    throw ShapeError("loss_trans: " + std::to_string(labels.size()) + " labels for probabilities " + shape_str(probs.shape()));
  const std::size_t s = probs.dim(1);
  std::vector<Tensor> terms;
  terms.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_one_hot(labels[i]);
    terms.push_back(cross_entropy(reshape(slice_rows(probs, i, i + 1), {s}), labels[i]));
  }
  return scale(add_n(terms), 1.0 / static_cast<double>(labels.size()));
}

inline Tensor total_loss(const Tensor& lc, const Tensor& lt, double alpha) { return add(lc, scale(lt, alpha)); }

struct WindowLoss {
  Tensor total, current, trans;
};

// Loss of one window. Stage-1 models (no NFSM) use the baseline path only.
inline WindowLoss window_loss(const Model& m, const WindowSample& w, double alpha) {
  const auto s = m.cfg.s;
  if (!m.has_nfsm) {
    Tensor lc = loss_current(forward_baseline(m, w.features), one_hot(w.current_label, s));
    return {lc, lc, Tensor::scalar(0.0)};
  }
  NfsmOutputs out = forward_nfsm(m, w.features);
  Tensor lc = loss_current(out.p_hat, one_hot(w.current_label, s));
  std::vector<Tensor> ys;
  ys.reserve(w.context_labels.size());
  for (auto l : w.context_labels) ys.push_back(one_hot(l, s));
  Tensor lt = loss_trans(out.transitions.probs, ys);
  return {total_loss(lc, lt, alpha), lc, lt};
}

// ---- optimiser -----------------------------------------------------------------

class AdamOptimizer {
 public:
  AdamOptimizer(Model::Named params, double beta1, double beta2, double eps)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& [name, t] : params_) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].second;
      auto g = p.grad();
      auto x = p.data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  const Model::Named& params() const noexcept { return params_; }
  std::uint64_t steps() const noexcept { return t_; }

 private:
  Model::Named params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

// Parameters updated in the current regime; all others stop requiring grads.
inline Model::Named select_trainable(const Model& m, bool freeze_backbone) {
  Model::Named out;
  for (auto [name, t] : m.named_parameters()) {
    const bool on = !freeze_backbone || trainable_when_frozen(name);
    t.set_requires_grad(on);
    if (on) out.emplace_back(name, t);
  }
  return out;
}

struct StepLosses {
  double total = 0.0, current = 0.0, trans = 0.0;
};

// Forward + backward over the batch (mean loss), then one Adam update.
inline StepLosses train_step(const Model& model, std::span<const WindowSample> batch, double alpha,
                             AdamOptimizer& opt, double lr) {
  if (batch.empty()) throw ArgumentError("train_step: empty batch");
  opt.zero_grad();
  StepLosses acc;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto& sample : batch) {
    Tape tape;
    TapeScope scope(tape);
    WindowLoss l = window_loss(model, sample, alpha);
    if (!std::isfinite(l.total.item())) throw NumericError("train_step: non-finite loss");
    acc.total += w * l.total.item();
    acc.current += w * l.current.item();
    acc.trans += w * l.trans.item();
    tape.backward(scale(l.total, w));
  }
  opt.step(lr);
  return acc;
}

// ---- checkpoints ----------------------------------------------------------------

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  ModelConfig config;
  std::uint64_t step = 0;
  int stage = 1;  // 1: baseline only, 2: NFSM attached
  std::string rng_state;
  std::vector<NamedTensor> tensors;

  bool has_nfsm() const noexcept { return stage == 2; }
  bool operator==(const Checkpoint&) const = default;
};

inline Checkpoint to_checkpoint(const Model& m, std::uint64_t step, const std::string& rng_state) {
  Checkpoint c;
  c.config = m.cfg;
  c.step = step;
  c.stage = m.has_nfsm ? 2 : 1;
  c.rng_state = rng_state;
  for (auto& [name, t] : m.named_parameters()) c.tensors.push_back({name, t.shape(), t.values()});
  return c;
}

inline void check_layout(const Checkpoint& c) {
  const auto layout = parameter_layout(c.config, c.has_nfsm());
  if (layout.size() != c.tensors.size())
    throw FormatError("checkpoint: expected " + std::to_string(layout.size()) + " tensors, found " +
                      std::to_string(c.tensors.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = c.tensors[i];
    if (t.name != layout[i].first)
      throw FormatError("checkpoint: tensor " + std::to_string(i) + " is '" + t.name + "', expected '" + layout[i].first + "'");
    if (t.shape != layout[i].second)
      throw FormatError("checkpoint: tensor '" + t.name + "' has shape " + shape_str(t.shape) + ", expected " +
                        shape_str(layout[i].second));
    if (t.values.size() != shape_numel(t.shape)) throw FormatError("checkpoint: tensor '" + t.name + "' value count");
  }
}

inline Model model_from_checkpoint(const Checkpoint& c) {
  check_layout(c);
  std::mt19937_64 rng(0);
  Model m = c.has_nfsm() ? init_full_model(c.config, rng) : init_baseline_model(c.config, rng);
  auto named = m.named_parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto dst = named[i].second.data();
    std::copy(c.tensors[i].values.begin(), c.tensors[i].values.end(), dst.begin());
  }
  return m;
}

inline constexpr std::string_view kCheckpointMagic{"NFSMCK1\0", 8};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// magic, u32 version, u32 header length, JSON header, f64 payloads.
inline std::string encode_checkpoint(const Checkpoint& c) {
  io::json dir = io::json::array();
  std::size_t offset = 0;
  for (const auto& t : c.tensors) {
    dir.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
    offset += t.values.size() * 8;
  }
  io::json header{{"format", "nfsm-checkpoint"}, {"model", to_json(c.config)}, {"step", c.step},
                  {"stage", c.stage},            {"rng_state", c.rng_state},   {"tensors", dir}};
  const std::string h = header.dump();
  io::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(h.size()));
  w.raw(h);
  for (const auto& t : c.tensors)
    for (double v : t.values) w.f64(v);
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.raw(8, "magic") != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto hlen = r.u32("header length");
  const auto htext = r.raw(hlen, "header");
  io::json h;
  try {
    h = io::json::parse(htext);
  } catch (const io::json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  Checkpoint c;
  try {
    if (h.at("format") != "nfsm-checkpoint") throw FormatError("checkpoint: header format field");
    c.config = model_config_from_json(h.at("model"), "checkpoint model");
    c.step = h.at("step").get<std::uint64_t>();
    c.stage = h.at("stage").get<int>();
    c.rng_state = h.at("rng_state").get<std::string>();
    std::size_t expect_offset = 0;
    for (const auto& e : h.at("tensors")) {
      NamedTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (offset != expect_offset) throw FormatError("checkpoint: tensor '" + t.name + "' offset");
      if (count != shape_numel(t.shape)) throw FormatError("checkpoint: tensor '" + t.name + "' count");
      expect_offset += count * 8;
      t.values.resize(count);
      c.tensors.push_back(std::move(t));
    }
    if (r.remaining() != expect_offset)
      throw FormatError("checkpoint: payload holds " + std::to_string(r.remaining()) + " bytes, directory needs " +
                        std::to_string(expect_offset));
  } catch (const io::json::exception& e) {
    throw FormatError(std::string("checkpoint: header field: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  if (c.stage != 1 && c.stage != 2) throw FormatError("checkpoint: stage must be 1 or 2");
  for (auto& t : c.tensors)
    for (auto& v : t.values) v = r.f64(t.name.c_str());
  check_layout(c);
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& p) { io::write_file(p, encode_checkpoint(c)); }

inline Checkpoint load_checkpoint(const std::filesystem::path& p) {
  try {
    return decode_checkpoint(io::read_file(p));
  } catch (const FormatError& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& p, const ModelConfig& expected) {
  Checkpoint c = load_checkpoint(p);
  if (!(c.config == expected))
    throw ShapeError("checkpoint " + p.string() + ": model config mismatch, expected " + describe(expected) + ", found " +
                     describe(c.config));
  return c;
}

inline std::string checkpoint_hash(const Checkpoint& c) { return io::hex64(io::fnv1a(encode_checkpoint(c))); }

// ---- training protocol ------------------------------------------------------------

struct LogRow {
  int stage = 1;
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  StepLosses losses;
};

struct TrainResult {
  Checkpoint stage1;
  Checkpoint final_ckpt;
  std::vector<LogRow> log;
};

namespace detail {

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

struct FrameRef {
  std::size_t video, frame;
};

inline std::vector<FrameRef> all_frames(const std::vector<VideoSequence>& videos) {
  std::vector<FrameRef> out;
  for (std::size_t v = 0; v < videos.size(); ++v)
    for (std::size_t t = 0; t < videos[v].size(); ++t) out.push_back({v, t});
  return out;
}

// One window per frame per epoch, shuffled by `rng`, in mini-batches.
inline void run_epochs(const Model& model, const std::vector<VideoSequence>& videos, std::size_t epochs,
                       std::size_t batch_size, double alpha, double lr, AdamOptimizer& opt, std::mt19937_64& rng,
                       int stage, std::uint64_t& step, std::vector<LogRow>& log) {
  auto frames = all_frames(videos);
  std::vector<WindowSample> batch;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(frames.begin(), frames.end(), rng);
    for (std::size_t start = 0; start < frames.size(); start += batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(frames.size(), start + batch_size); ++k)
        batch.push_back(make_window(videos[frames[k].video], frames[k].frame, model.cfg));
      StepLosses l = train_step(model, batch, alpha, opt, lr);
      log.push_back({stage, e, ++step, l});
    }
  }
}

}  // namespace detail

inline void check_training_data(const std::vector<VideoSequence>& videos, const ModelConfig& cfg) {
  if (videos.empty()) throw ArgumentError("train: dataset is empty");
  for (const auto& v : videos) {
    if (v.frames.empty()) throw ArgumentError("train: video " + v.video_id + " is empty");
    if (v.frames[0].features.size() != cfg.feat_dim)
      throw ShapeError("train: video " + v.video_id + " feature width differs from model feat_dim");
    for (const auto& f : v.frames)
      if (f.label >= cfg.s) throw ArgumentError("train: label out of range in " + v.video_id);
  }
}

// Stage 1: backbone + classifier with the current-frame loss only.
inline Checkpoint train_stage1(const std::vector<VideoSequence>& videos, const ModelConfig& cfg, const TrainConfig& tc,
                               std::vector<LogRow>* log = nullptr) {
  validate(cfg);
  validate(tc);
  check_training_data(videos, cfg);
  std::mt19937_64 init_rng(cfg.seed);
  std::mt19937_64 rng(tc.seed);
  Model model = init_baseline_model(cfg, init_rng);
  AdamOptimizer opt(select_trainable(model, false), tc.beta1, tc.beta2, tc.epsilon);
  std::uint64_t step = 0;
  std::vector<LogRow> local;
  detail::run_epochs(model, videos, tc.epochs_stage1, tc.batch_size, 0.0, tc.learning_rate, opt, rng, 1, step,
                     log ? *log : local);
  return to_checkpoint(model, step, detail::rng_state(rng));
}

// Stage 2: attach fresh NFSM parts to a stage-1 model and train with the
// total loss. With freeze_backbone only the NFSM parts are updated.
inline Checkpoint train_stage2(const Checkpoint& stage1, const std::vector<VideoSequence>& videos, const TrainConfig& tc,
                               std::vector<LogRow>* log = nullptr) {
  validate(tc);
  if (stage1.has_nfsm()) throw ArgumentError("train_stage2: checkpoint already has NFSM heads");
  check_training_data(videos, stage1.config);
  Model model = model_from_checkpoint(stage1);
  model.cfg.alpha = tc.alpha;
  std::mt19937_64 init_rng(stage1.config.seed + 1);
  attach_nfsm(model, init_rng);
  std::mt19937_64 rng(tc.seed + 1);
  AdamOptimizer opt(select_trainable(model, tc.freeze_backbone), tc.beta1, tc.beta2, tc.epsilon);
  std::uint64_t step = stage1.step;
  std::vector<LogRow> local;
  detail::run_epochs(model, videos, tc.epochs_stage2, tc.batch_size, tc.alpha, tc.stage2_learning_rate, opt, rng, 2,
                     step, log ? *log : local);
  select_trainable(model, false);
  return to_checkpoint(model, step, detail::rng_state(rng));
}

inline TrainResult train(const std::vector<VideoSequence>& videos, const ModelConfig& cfg, const TrainConfig& tc) {
  TrainResult r;
  r.stage1 = train_stage1(videos, cfg, tc, &r.log);
  r.final_ckpt = tc.epochs_stage2 == 0 ? r.stage1 : train_stage2(r.stage1, videos, tc, &r.log);
  return r;
}

}  // namespace nfsm
