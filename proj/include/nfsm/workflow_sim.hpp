#pragma once

// Synthetic procedural workflows: Markov phase paths with dwell times and
// phase-conditioned, AR(1)-smoothed Gaussian frame features. Ambiguity
// events borrow another phase's mean for a single frame without touching
// the label.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "nfsm/error.hpp"
#include "nfsm/io.hpp"

namespace nfsm {

struct WorkflowSpec {
  std::size_t num_phases = 0;
  std::vector<std::vector<double>> transition;  // s x s, row-stochastic
  std::size_t dwell_min = 1;
  std::size_t dwell_max = 1;
  std::size_t feat_dim = 0;
  std::vector<std::vector<double>> phase_means;  // s x feat_dim
  double emission_noise_sigma = 0.0;
  double smoothing_rho = 0.0;
  double ambiguity_rate = 0.0;
  std::size_t terminal_phase = 0;

  bool operator==(const WorkflowSpec&) const = default;
};

struct FrameRecord {
  std::vector<float> features;
  std::uint16_t label = 0;
};

struct VideoSequence {
  std::string video_id;
  std::vector<FrameRecord> frames;

  std::size_t size() const noexcept { return frames.size(); }
  std::vector<std::size_t> labels() const {
    std::vector<std::size_t> l;
    l.reserve(frames.size());
    for (const auto& f : frames) l.push_back(f.label);
    return l;
  }
};

inline void validate(const WorkflowSpec& spec) {
  const auto s = spec.num_phases;
  if (s < 1) throw ConfigError("workflow spec: num_phases must be >= 1");
  if (spec.transition.size() != s) throw ConfigError("workflow spec: transition must have num_phases rows");
  for (std::size_t a = 0; a < s; ++a) {
    if (spec.transition[a].size() != s) throw ConfigError("workflow spec: transition row " + std::to_string(a) + " has wrong length");
    double total = 0.0;
    for (double p : spec.transition[a]) {
      if (!(p >= 0.0)) throw ConfigError("workflow spec: negative transition probability in row " + std::to_string(a));
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("workflow spec: transition row " + std::to_string(a) + " sums to " + std::to_string(total));
  }
  if (spec.terminal_phase >= s) throw ConfigError("workflow spec: terminal_phase out of range");
  if (spec.transition[spec.terminal_phase][spec.terminal_phase] != 1.0)
    throw ConfigError("workflow spec: terminal_phase row must be absorbing");
  if (spec.dwell_min < 1 || spec.dwell_min > spec.dwell_max)
    throw ConfigError("workflow spec: need 1 <= dwell_min <= dwell_max");
  if (spec.feat_dim < 1) throw ConfigError("workflow spec: feat_dim must be >= 1");
  if (spec.phase_means.size() != s) throw ConfigError("workflow spec: phase_means must have num_phases rows");
  for (const auto& row : spec.phase_means)
    if (row.size() != spec.feat_dim) throw ConfigError("workflow spec: phase_means row width must equal feat_dim");
  if (!(spec.emission_noise_sigma >= 0.0)) throw ConfigError("workflow spec: emission_noise_sigma must be >= 0");
  if (!(spec.smoothing_rho >= 0.0 && spec.smoothing_rho < 1.0)) throw ConfigError("workflow spec: smoothing_rho must lie in [0,1)");
  if (!(spec.ambiguity_rate >= 0.0 && spec.ambiguity_rate <= 1.0)) throw ConfigError("workflow spec: ambiguity_rate must lie in [0,1]");
  if (spec.ambiguity_rate > 0.0 && s < 2) throw ConfigError("workflow spec: ambiguity needs at least two phases");
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Default benchmark: 7 phases, left-to-right chain (0.9 advance, 0.1 skip),
// sign-pattern phase means of magnitude `mean_scale`.
inline WorkflowSpec synth7_spec(double mean_scale = 0.4) {
  WorkflowSpec w;
  w.num_phases = 7;
  w.feat_dim = 16;
  w.dwell_min = 20;
  w.dwell_max = 60;
  w.emission_noise_sigma = 0.6;
  w.smoothing_rho = 0.5;
  w.ambiguity_rate = 0.08;
  w.terminal_phase = 6;
  w.transition.assign(7, std::vector<double>(7, 0.0));
  for (std::size_t a = 0; a < 7; ++a) {
    if (a == 6) {
      w.transition[a][a] = 1.0;
    } else if (a == 5) {
      w.transition[a][6] = 1.0;
    } else {
      w.transition[a][a + 1] = 0.9;
      w.transition[a][a + 2] = 0.1;
    }
  }
  w.phase_means.assign(7, std::vector<double>(16, 0.0));
  for (std::size_t a = 0; a < 7; ++a)
    for (std::size_t j = 0; j < 16; ++j)
      w.phase_means[a][j] = (detail::splitmix64(a * 16 + j + 1) & 1) ? mean_scale : -mean_scale;
  return w;
}

inline VideoSequence sample_video(const WorkflowSpec& spec, std::uint64_t seed, std::size_t max_frames) {
  validate(spec);
  if (max_frames < 1) throw ArgumentError("sample_video: max_frames must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dwell(spec.dwell_min, spec.dwell_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto s = spec.num_phases;

  std::vector<std::uint16_t> labels;
  std::size_t phase = 0;
  while (labels.size() < max_frames) {
    const std::size_t len = dwell(rng);
    for (std::size_t k = 0; k < len && labels.size() < max_frames; ++k)
      labels.push_back(static_cast<std::uint16_t>(phase));
    if (phase == spec.terminal_phase) break;
    const double u = unit(rng);
    double acc = 0.0;
    std::size_t next = s - 1;
    for (std::size_t b = 0; b < s; ++b) {
      acc += spec.transition[phase][b];
      if (u < acc) {
        next = b;
        break;
      }
    }
    phase = next;
  }

  VideoSequence v;
  v.video_id = "video_" + std::to_string(seed);
  v.frames.resize(labels.size());
  std::vector<double> prev = spec.phase_means[labels[0]];
  for (std::size_t t = 0; t < labels.size(); ++t) {
    std::size_t emit = labels[t];
    if (unit(rng) < spec.ambiguity_rate) {
      std::uniform_int_distribution<std::size_t> other(0, s - 2);
      std::size_t o = other(rng);
      emit = o >= emit ? o + 1 : o;
    }
    auto& f = v.frames[t];
    f.label = labels[t];
    f.features.resize(spec.feat_dim);
    for (std::size_t j = 0; j < spec.feat_dim; ++j) {
      const double x = spec.smoothing_rho * prev[j] + (1.0 - spec.smoothing_rho) * spec.phase_means[emit][j] +
                       spec.emission_noise_sigma * noise(rng);
      f.features[j] = static_cast<float>(x);
      prev[j] = f.features[j];
    }
  }
  return v;
}

// Row-normalised counts of consecutive label pairs; empty rows are uniform.
inline std::vector<std::vector<double>> empirical_transition(const std::vector<VideoSequence>& videos,
                                                             std::size_t num_phases) {
  if (videos.empty()) throw ArgumentError("empirical_transition: empty dataset");
  std::vector<std::vector<double>> c(num_phases, std::vector<double>(num_phases, 0.0));
  for (const auto& v : videos)
    for (std::size_t t = 0; t + 1 < v.frames.size(); ++t) {
      const auto a = v.frames[t].label, b = v.frames[t + 1].label;
      if (a >= num_phases || b >= num_phases) throw ArgumentError("empirical_transition: label out of range");
      c[a][b] += 1.0;
    }
  for (auto& row : c) {
    double total = 0.0;
    for (double x : row) total += x;
    for (double& x : row) x = total > 0.0 ? x / total : 1.0 / static_cast<double>(num_phases);
  }
  return c;
}

// Phases with at least one observed outgoing frame pair.
inline std::vector<bool> reachable_phases(const std::vector<VideoSequence>& videos, std::size_t num_phases) {
  std::vector<bool> r(num_phases, false);
  for (const auto& v : videos)
    for (std::size_t t = 0; t + 1 < v.frames.size(); ++t) r[v.frames[t].label] = true;
  return r;
}

// ---- serialisation ----------------------------------------------------------

inline constexpr std::string_view kDatasetMagic{"NFSMDS1\0", 8};

inline io::json spec_to_json(const WorkflowSpec& w) {
  return io::json{{"num_phases", w.num_phases},
                  {"transition", w.transition},
                  {"dwell_min", w.dwell_min},
                  {"dwell_max", w.dwell_max},
                  {"feat_dim", w.feat_dim},
                  {"phase_means", w.phase_means},
                  {"emission_noise_sigma", w.emission_noise_sigma},
                  {"smoothing_rho", w.smoothing_rho},
                  {"ambiguity_rate", w.ambiguity_rate},
                  {"terminal_phase", w.terminal_phase}};
}

inline WorkflowSpec spec_from_json(const io::json& j, const std::string& where = "workflow spec") {
  io::check_keys(j, {"num_phases", "transition", "dwell_min", "dwell_max", "feat_dim", "phase_means",
                     "emission_noise_sigma", "smoothing_rho", "ambiguity_rate", "terminal_phase"},
                 where);
  WorkflowSpec w;
  w.num_phases = io::get_required<std::size_t>(j, "num_phases", where);
  w.transition = io::get_required<std::vector<std::vector<double>>>(j, "transition", where);
  w.dwell_min = io::get_required<std::size_t>(j, "dwell_min", where);
  w.dwell_max = io::get_required<std::size_t>(j, "dwell_max", where);
  w.feat_dim = io::get_required<std::size_t>(j, "feat_dim", where);
  w.phase_means = io::get_required<std::vector<std::vector<double>>>(j, "phase_means", where);
  w.emission_noise_sigma = io::get_required<double>(j, "emission_noise_sigma", where);
  w.smoothing_rho = io::get_required<double>(j, "smoothing_rho", where);
  w.ambiguity_rate = io::get_required<double>(j, "ambiguity_rate", where);
  w.terminal_phase = io::get_required<std::size_t>(j, "terminal_phase", where);
  validate(w);
  return w;
}

inline WorkflowSpec load_spec(const std::filesystem::path& p) {
  return spec_from_json(io::parse_json(io::read_file(p), p.string()), p.string());
}

inline void save_spec(const WorkflowSpec& w, const std::filesystem::path& p) {
  io::write_file(p, spec_to_json(w).dump(2) + "\n");
}

inline std::string encode_video(const VideoSequence& v) {
  io::ByteWriter w;
  w.raw(kDatasetMagic);
  const std::size_t fd = v.frames.empty() ? 0 : v.frames[0].features.size();
  w.u32(static_cast<std::uint32_t>(v.frames.size()));
  w.u32(static_cast<std::uint32_t>(fd));
  for (const auto& f : v.frames) {
    if (f.features.size() != fd) throw ShapeError("encode_video: ragged feature rows");
    for (float x : f.features) w.f32(x);
  }
  for (const auto& f : v.frames) w.u16(f.label);
  return w.bytes();
}

inline VideoSequence decode_video(std::string_view bytes, std::string video_id) {
  io::ByteReader r(bytes);
  if (r.raw(8, "magic") != kDatasetMagic) throw FormatError("dataset file: bad magic");
  const std::size_t n = r.u32("num_frames");
  const std::size_t fd = r.u32("feat_dim");
  if (r.remaining() != n * fd * 4 + n * 2)
    throw FormatError("dataset file: payload size " + std::to_string(r.remaining()) + " does not match num_frames=" +
                      std::to_string(n) + ", feat_dim=" + std::to_string(fd));
  VideoSequence v;
  v.video_id = std::move(video_id);
  v.frames.resize(n);
  for (auto& f : v.frames) {
    f.features.resize(fd);
    for (auto& x : f.features) x = r.f32("features");
  }
  for (auto& f : v.frames) f.label = r.u16("labels");
  return v;
}

struct Dataset {
  WorkflowSpec spec;
  std::uint64_t base_seed = 0;
  std::size_t max_frames = 0;
  std::vector<VideoSequence> videos;
};

struct ManifestEntry {
  std::string video_id;
  std::string file;
  std::size_t num_frames = 0;
};

inline constexpr const char* kManifestName = "manifest.json";

// Writes one binary file per video plus manifest.json into `out_dir`.
// Returns the manifest path.
inline std::filesystem::path generate_dataset(const WorkflowSpec& spec, std::size_t n_videos, std::uint64_t base_seed,
                                              const std::filesystem::path& out_dir, std::size_t max_frames = 2000) {
  validate(spec);
  io::json videos = io::json::array();
  for (std::size_t i = 0; i < n_videos; ++i) {
    const auto v = sample_video(spec, base_seed + i, max_frames);
    const std::string file = v.video_id + ".nfsmds";
    io::write_file(out_dir / file, encode_video(v));
    videos.push_back({{"id", v.video_id}, {"file", file}, {"num_frames", v.frames.size()}});
  }
  io::json manifest{{"format", "nfsm-dataset"},
                    {"version", 1},
                    {"base_seed", base_seed},
                    {"max_frames", max_frames},
                    {"spec", spec_to_json(spec)},
                    {"videos", videos}};
  const auto path = out_dir / kManifestName;
  io::write_file(path, manifest.dump(2) + "\n");
  return path;
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const std::string where = manifest_path.string();
  const auto j = io::parse_json(io::read_file(manifest_path), where);
  io::check_keys(j, {"format", "version", "base_seed", "max_frames", "spec", "videos"}, where);
  if (io::get_required<std::string>(j, "format", where) != "nfsm-dataset")
    throw FormatError(where + ": not an nfsm-dataset manifest");
  if (io::get_required<int>(j, "version", where) != 1) throw FormatError(where + ": unsupported manifest version");
  Dataset d;
  d.base_seed = io::get_required<std::uint64_t>(j, "base_seed", where);
  d.max_frames = io::get_required<std::size_t>(j, "max_frames", where);
  d.spec = spec_from_json(j.at("spec"), where + ": spec");
  const auto dir = manifest_path.parent_path();
  for (const auto& e : j.at("videos")) {
    io::check_keys(e, {"id", "file", "num_frames"}, where + ": videos[]");
    auto id = io::get_required<std::string>(e, "id", where);
    auto file = io::get_required<std::string>(e, "file", where);
    const auto n = io::get_required<std::size_t>(e, "num_frames", where);
    auto v = decode_video(io::read_file(dir / file), id);
    if (v.frames.size() != n)
      throw FormatError(where + ": " + file + " holds " + std::to_string(v.frames.size()) + " frames, manifest says " +
                        std::to_string(n));
    if (n > 0 && v.frames[0].features.size() != d.spec.feat_dim)
      throw FormatError(where + ": " + file + " feat_dim differs from spec");
    for (const auto& f : v.frames)
      if (f.label >= d.spec.num_phases) throw FormatError(where + ": " + file + " has label out of range");
    d.videos.push_back(std::move(v));
  }
  return d;
}

}  // namespace nfsm
