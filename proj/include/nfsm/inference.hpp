#pragma once

// Transition-aware inference. Each window at time t contributes its
// transition-state forecasts for frames t+1..t+m to a buffer; at frame t
// the buffered forecasts for t are averaged and merged with p_hat_t.

#include <cstdio>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nfsm/io.hpp"
#include "nfsm/model.hpp"

namespace nfsm {

enum class Source { A, B, C };  // baseline, transition-aware p_hat, full merge
enum class Mode { Online, Offline };

inline const char* to_string(Source s) { return s == Source::A ? "A" : s == Source::B ? "B" : "C"; }
inline const char* to_string(Mode m) { return m == Mode::Online ? "online" : "offline"; }

inline Source parse_source(const std::string& s) {
  if (s == "A") return Source::A;
  if (s == "B") return Source::B;
  if (s == "C") return Source::C;
  throw ConfigError("unknown prediction source '" + s + "' (expected A, B or C)");
}

inline Mode parse_mode(const std::string& s) {
  if (s == "online") return Mode::Online;
  if (s == "offline") return Mode::Offline;
  throw ConfigError("unknown mode '" + s + "' (expected online or offline)");
}

using Distribution = std::vector<double>;

class TransitionBuffer {
 public:
  explicit TransitionBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(std::size_t target, Distribution dist) {
    auto& slot = pending_[target];
    if (slot.size() >= capacity_)
      throw ArgumentError("transition buffer: target " + std::to_string(target) + " already holds " +
                          std::to_string(capacity_) + " contributions");
    slot.push_back(std::move(dist));
  }

  // Removes and returns the contributions for `target`; anything older is dropped.
  std::vector<Distribution> take(std::size_t target) {
    std::vector<Distribution> out;
    auto it = pending_.find(target);
    if (it != pending_.end()) out = std::move(it->second);
    pending_.erase(pending_.begin(), pending_.upper_bound(target));
    return out;
  }

  std::size_t pending(std::size_t target) const {
    auto it = pending_.find(target);
    return it == pending_.end() ? 0 : it->second.size();
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [k, v] : pending_) n += v.size();
    return n;
  }
  std::size_t capacity() const noexcept { return capacity_; }
  void clear() { pending_.clear(); }

 private:
  std::size_t capacity_;
  std::map<std::size_t, std::vector<Distribution>> pending_;
};

// Mean of the available contributions; nullopt on cold start.
inline std::optional<Distribution> aggregate(std::span<const Distribution> contributions) {
  if (contributions.empty()) return std::nullopt;
  Distribution out(contributions[0].size(), 0.0);
  for (const auto& c : contributions) {
    if (c.size() != out.size()) throw ShapeError("aggregate: contributions differ in length");
    for (std::size_t j = 0; j < c.size(); ++j) out[j] += c[j];
  }
  for (double& x : out) x /= static_cast<double>(contributions.size());
  return out;
}

// normalise(p_hat * p_tilde); falls back to p_hat when the product vanishes.
inline Distribution merge(std::span<const double> p_hat, std::span<const double> p_tilde) {
  if (p_hat.size() != p_tilde.size()) throw ShapeError("merge: length mismatch");
  Distribution out(p_hat.size());
  double z = 0.0;
  for (std::size_t j = 0; j < out.size(); ++j) z += (out[j] = p_hat[j] * p_tilde[j]);
  if (z < 1e-12) return Distribution(p_hat.begin(), p_hat.end());
  for (double& x : out) x /= z;
  return out;
}

struct FramePrediction {
  std::size_t frame = 0;
  Distribution p_hat;                  // head output (baseline output for source A)
  std::optional<Distribution> p_tilde;  // aggregated forecasts, absent on cold start
  Distribution p;                      // the prediction of the chosen source
  std::size_t predicted = 0;
  double confidence = 0.0;
  std::optional<std::vector<double>> history_table;  // s*s mean over history positions
};

namespace detail {

inline FramePrediction finish(std::size_t t, Distribution p_hat, std::optional<Distribution> p_tilde, Source src) {
  FramePrediction fp;
  fp.frame = t;
  fp.p = (src == Source::C && p_tilde) ? merge(p_hat, *p_tilde) : p_hat;
  fp.p_hat = std::move(p_hat);
  fp.p_tilde = std::move(p_tilde);
  fp.predicted = 0;
  for (std::size_t j = 1; j < fp.p.size(); ++j)
    if (fp.p[j] > fp.p[fp.predicted]) fp.predicted = j;
  fp.confidence = fp.p[fp.predicted];
  return fp;
}

inline std::vector<double> mean_history_table(const TransitionProbSet& set, std::size_t n, std::size_t s) {
  std::vector<double> acc(s * s, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < s * s; ++k) acc[k] += set.tables[i][k];
  for (double& x : acc) x /= static_cast<double>(n);
  return acc;
}

// Shared tail of online and offline inference for one window's outputs.
inline FramePrediction consume_window(const Model& m, const NfsmOutputs& out, TransitionBuffer& buffer, std::size_t t,
                                      Source src) {
  const auto& c = m.cfg;
  for (std::size_t j = 1; j <= c.m; ++j) {
    const std::size_t row = c.n - 1 + j;
    Distribution d(out.transitions.probs.values().begin() + static_cast<std::ptrdiff_t>(row * c.s),
                   out.transitions.probs.values().begin() + static_cast<std::ptrdiff_t>((row + 1) * c.s));
    buffer.push(t + j, std::move(d));
  }
  auto contributions = buffer.take(t);
  auto fp = finish(t, out.p_hat.values(), aggregate(contributions), src);
  fp.history_table = mean_history_table(out.transitions, c.n, c.s);
  return fp;
}

}  // namespace detail

// Causal frame history of one stream: the first frame (for left padding)
// and the most recent n-1 frames.
struct StreamHistory {
  std::vector<float> first;
  std::deque<std::vector<float>> recent;
  std::size_t next_frame = 0;

  void reset() {
    first.clear();
    recent.clear();
    next_frame = 0;
  }
};

// Consumes the next frame of a stream and returns its prediction.
inline FramePrediction stream_step(const Model& m, TransitionBuffer& buffer, std::span<const float> frame,
                                   StreamHistory& history, Source src = Source::C) {
  const auto& c = m.cfg;
  if (frame.size() != c.feat_dim)
    throw ShapeError("stream_step: frame has " + std::to_string(frame.size()) + " features, model expects " +
                     std::to_string(c.feat_dim));
  if (src != Source::A && !m.has_nfsm) throw ConfigError("stream_step: source " + std::string(to_string(src)) + " needs NFSM heads");
  const std::size_t t = history.next_frame++;
  if (t == 0) history.first.assign(frame.begin(), frame.end());

  std::vector<double> x(c.n * c.feat_dim);
  const std::size_t have = history.recent.size();  // frames t-have..t-1
  for (std::size_t k = 0; k < c.n; ++k) {
    const std::size_t back = c.n - 1 - k;  // frame t-back
    std::span<const float> src_frame;
    if (back == 0) src_frame = frame;
    else if (back <= have) src_frame = history.recent[have - back];
    else src_frame = history.first;
    std::copy(src_frame.begin(), src_frame.end(), x.begin() + static_cast<std::ptrdiff_t>(k * c.feat_dim));
  }
  history.recent.emplace_back(frame.begin(), frame.end());
  if (history.recent.size() > c.n - 1) history.recent.pop_front();
  Tensor window({c.n, c.feat_dim}, std::move(x));

  if (src == Source::A) return detail::finish(t, forward_baseline(m, window).values(), std::nullopt, src);
  return detail::consume_window(m, forward_nfsm(m, window), buffer, t, src);
}

inline std::vector<FramePrediction> run_online(const Model& m, const VideoSequence& v, Source src = Source::C) {
  TransitionBuffer buffer(m.cfg.m);
  StreamHistory history;
  std::vector<FramePrediction> out;
  out.reserve(v.size());
  for (const auto& f : v.frames) out.push_back(stream_step(m, buffer, f.features, history, src));
  return out;
}

// Same pipeline with encoded real future frames in place of the
// pseudo-future rows; frames past the end repeat the last frame.
inline std::vector<FramePrediction> run_offline(const Model& m, const VideoSequence& v, Source src = Source::C) {
  const auto& c = m.cfg;
  if (src != Source::A && !m.has_nfsm) throw ConfigError("run_offline: source " + std::string(to_string(src)) + " needs NFSM heads");
  TransitionBuffer buffer(c.m);
  std::vector<FramePrediction> out;
  out.reserve(v.size());
  for (std::size_t t = 0; t < v.size(); ++t) {
    Tensor hist = frame_block(v, static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(c.n) + 1, c.n, c.feat_dim);
    if (src == Source::A) {
      out.push_back(detail::finish(t, forward_baseline(m, hist).values(), std::nullopt, src));
      continue;
    }
    Tensor future = encode_real_future(m, v, t);
    out.push_back(detail::consume_window(m, forward_nfsm(m, hist, &future), buffer, t, src));
  }
  return out;
}

struct VideoPredictions {
  std::string video_id;
  std::vector<std::size_t> labels;
  std::vector<FramePrediction> frames;
};

inline std::vector<VideoPredictions> predict_videos(const Model& m, const std::vector<VideoSequence>& videos, Mode mode,
                                                    Source src) {
  std::vector<VideoPredictions> out;
  for (const auto& v : videos) {
    if (v.frames.empty()) continue;
    out.push_back({v.video_id, v.labels(), mode == Mode::Online ? run_online(m, v, src) : run_offline(m, v, src)});
  }
  return out;
}

// ---- prediction files ---------------------------------------------------------

struct PredictionRecord {
  std::string video_id;
  std::size_t frame = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  Distribution probs;
};

struct PredictionFile {
  std::string mode, source, checkpoint_hash, model;
  std::size_t num_phases = 0;
  std::vector<PredictionRecord> records;
};

inline std::string format_prob(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9f", x);
  return buf;
}

inline PredictionFile to_prediction_file(const std::vector<VideoPredictions>& preds, Mode mode, Source src,
                                         const std::string& ckpt_hash, const ModelConfig& cfg) {
  PredictionFile f{to_string(mode), to_string(src), ckpt_hash, describe(cfg), cfg.s, {}};
  for (const auto& v : preds)
    for (std::size_t t = 0; t < v.frames.size(); ++t)
      f.records.push_back({v.video_id, v.frames[t].frame, v.labels[t], v.frames[t].predicted, v.frames[t].p});
  return f;
}

inline std::string encode_predictions(const PredictionFile& f) {
  std::ostringstream os;
  os << "# nfsm-predictions 1\n"
     << "# mode " << f.mode << "\n"
     << "# source " << f.source << "\n"
     << "# checkpoint " << f.checkpoint_hash << "\n"
     << "# model " << f.model << "\n"
     << "# num_phases " << f.num_phases << "\n"
     << "# columns video_id frame label predicted p_t\n";
  for (const auto& r : f.records) {
    os << r.video_id << '\t' << r.frame << '\t' << r.label << '\t' << r.predicted << '\t';
    for (std::size_t j = 0; j < r.probs.size(); ++j) os << (j ? " " : "") << format_prob(r.probs[j]);
    os << '\n';
  }
  return os.str();
}

inline PredictionFile decode_predictions(const std::string& text, const std::string& origin = "predictions") {
  PredictionFile f;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool magic = false;
  auto fail = [&](const std::string& why) { throw FormatError(origin + ":" + std::to_string(lineno) + ": " + why); };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream h(line.substr(1));
      std::string key;
      h >> key;
      std::string rest;
      std::getline(h >> std::ws, rest);
      if (key == "nfsm-predictions") {
        if (rest != "1") fail("unsupported prediction file version");
        magic = true;
      } else if (key == "mode") f.mode = rest;
      else if (key == "source") f.source = rest;
      else if (key == "checkpoint") f.checkpoint_hash = rest;
      else if (key == "model") f.model = rest;
      else if (key == "num_phases") f.num_phases = std::stoul(rest);
      continue;
    }
    if (!magic) fail("missing '# nfsm-predictions' header");
    std::istringstream r(line);
    PredictionRecord rec;
    if (!(r >> rec.video_id >> rec.frame >> rec.label >> rec.predicted)) fail("malformed record");
    double p;
    while (r >> p) rec.probs.push_back(p);
    if (rec.probs.size() != f.num_phases) fail("expected " + std::to_string(f.num_phases) + " probabilities");
    if (rec.label >= f.num_phases || rec.predicted >= f.num_phases) fail("label out of range");
    f.records.push_back(std::move(rec));
  }
  if (!magic) throw FormatError(origin + ": missing '# nfsm-predictions' header");
  return f;
}

inline void write_predictions(const PredictionFile& f, const std::filesystem::path& p) {
  io::write_file(p, encode_predictions(f));
}
inline PredictionFile read_predictions(const std::filesystem::path& p) {
  return decode_predictions(io::read_file(p), p.string());
}

// Per-video mean of the history-position transition tables (s x s each).
inline std::vector<std::vector<double>> video_mean_tables(const VideoPredictions& v, std::size_t s) {
  std::vector<std::vector<double>> table(s, std::vector<double>(s, 0.0));
  std::size_t count = 0;
  for (const auto& f : v.frames) {
    if (!f.history_table) continue;
    ++count;
    for (std::size_t a = 0; a < s; ++a)
      for (std::size_t b = 0; b < s; ++b) table[a][b] += (*f.history_table)[a * s + b];
  }
  if (count == 0) throw ArgumentError("video_mean_tables: no transition tables recorded for " + v.video_id);
  for (auto& row : table)
    for (double& x : row) x /= static_cast<double>(count);
  return table;
}

// Structured text: one block per video, s rows of s decimals.
inline std::string encode_transition_tables(const std::vector<VideoPredictions>& preds, std::size_t s) {
  std::ostringstream os;
  os << "# nfsm-transition-tables 1\n# num_phases " << s << "\n";
  for (const auto& v : preds) {
    const auto t = video_mean_tables(v, s);
    os << "video " << v.video_id << "\n";
    for (const auto& row : t) {
      for (std::size_t b = 0; b < s; ++b) os << (b ? " " : "") << format_prob(row[b]);
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace nfsm
