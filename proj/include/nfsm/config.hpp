#pragma once

#include <cstdint>
#include <string>

#include "nfsm/error.hpp"
#include "nfsm/io.hpp"

namespace nfsm {

struct ModelConfig {
  std::size_t n = 16;              // history window (frames)
  std::size_t m = 8;               // future horizon (frames)
  std::size_t d = 16;              // embedding width
  std::size_t s = 7;               // phases
  std::size_t feat_dim = 16;       // input feature width
  std::size_t spatial_tokens = 1;  // tokens per frame
  double alpha = 1.0;              // transition-loss weight
  std::uint64_t seed = 0;

  std::size_t span() const noexcept { return n + m; }
  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  if (c.n < 1) throw ConfigError("model: n must be >= 1");
  if (c.m < 1) throw ConfigError("model: m must be >= 1");
  if (c.d < 2) throw ConfigError("model: d must be >= 2");
  if (c.s < 2) throw ConfigError("model: s must be >= 2");
  if (c.feat_dim < 1) throw ConfigError("model: feat_dim must be >= 1");
  if (c.spatial_tokens < 1) throw ConfigError("model: spatial_tokens must be >= 1");
  if (!(c.alpha >= 0.0)) throw ConfigError("model: alpha must be >= 0");
}

inline io::json to_json(const ModelConfig& c) {
  return io::json{{"n", c.n},   {"m", c.m},         {"d", c.d},
                  {"s", c.s},   {"feat_dim", c.feat_dim}, {"spatial_tokens", c.spatial_tokens},
                  {"alpha", c.alpha}, {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const io::json& j, const std::string& where = "model") {
  io::check_keys(j, {"n", "m", "d", "s", "feat_dim", "spatial_tokens", "alpha", "seed"}, where);
  ModelConfig c;
  c.n = io::get_or(j, "n", c.n, where);
  c.m = io::get_or(j, "m", c.m, where);
  c.d = io::get_or(j, "d", c.d, where);
  c.s = io::get_or(j, "s", c.s, where);
  c.feat_dim = io::get_or(j, "feat_dim", c.feat_dim, where);
  c.spatial_tokens = io::get_or(j, "spatial_tokens", c.spatial_tokens, where);
  c.alpha = io::get_or(j, "alpha", c.alpha, where);
  c.seed = io::get_or(j, "seed", c.seed, where);
  validate(c);
  return c;
}

inline std::string describe(const ModelConfig& c) { return to_json(c).dump(); }

struct TrainConfig {
  double learning_rate = 1e-3;         // stage 1
  double stage2_learning_rate = 1e-5;  // stage 2 (NFSM attached)
  std::size_t epochs_stage1 = 8;
  std::size_t epochs_stage2 = 5;
  double alpha = 1.0;
  std::size_t batch_size = 32;
  bool freeze_backbone = false;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate >= 0.0) || !(c.stage2_learning_rate >= 0.0))
    throw ConfigError("train: learning rates must be >= 0");
  if (!(c.alpha >= 0.0)) throw ConfigError("train: alpha must be >= 0");
  if (c.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw ConfigError("train: betas must lie in [0,1)");
  if (!(c.epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
}

inline io::json to_json(const TrainConfig& c) {
  return io::json{{"learning_rate", c.learning_rate},
                  {"stage2_learning_rate", c.stage2_learning_rate},
                  {"epochs_stage1", c.epochs_stage1},
                  {"epochs_stage2", c.epochs_stage2},
                  {"alpha", c.alpha},
                  {"batch_size", c.batch_size},
                  {"freeze_backbone", c.freeze_backbone},
                  {"seed", c.seed},
                  {"beta1", c.beta1},
                  {"beta2", c.beta2},
                  {"epsilon", c.epsilon}};
}

inline TrainConfig train_config_from_json(const io::json& j, const std::string& where = "train") {
  io::check_keys(j, {"learning_rate", "stage2_learning_rate", "epochs_stage1", "epochs_stage2", "alpha", "batch_size",
                     "freeze_backbone", "seed", "beta1", "beta2", "epsilon"},
                 where);
  TrainConfig c;
  c.learning_rate = io::get_or(j, "learning_rate", c.learning_rate, where);
  c.stage2_learning_rate = io::get_or(j, "stage2_learning_rate", c.stage2_learning_rate, where);
  c.epochs_stage1 = io::get_or(j, "epochs_stage1", c.epochs_stage1, where);
  c.epochs_stage2 = io::get_or(j, "epochs_stage2", c.epochs_stage2, where);
  c.alpha = io::get_or(j, "alpha", c.alpha, where);
  c.batch_size = io::get_or(j, "batch_size", c.batch_size, where);
  c.freeze_backbone = io::get_or(j, "freeze_backbone", c.freeze_backbone, where);
  c.seed = io::get_or(j, "seed", c.seed, where);
  c.beta1 = io::get_or(j, "beta1", c.beta1, where);
  c.beta2 = io::get_or(j, "beta2", c.beta2, where);
  c.epsilon = io::get_or(j, "epsilon", c.epsilon, where);
  validate(c);
  return c;
}

}  // namespace nfsm
