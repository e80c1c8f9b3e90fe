#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nfsm/backbone.hpp"
#include "nfsm/config.hpp"
#include "nfsm/state_machine.hpp"

namespace nfsm {

// Backbone + classifier, optionally extended with the NFSM parts
// (forecasting blocks, dynamic-embedding head, global state embeddings).
struct Model {
  ModelConfig cfg;
  BackboneParams backbone;
  GlobalStateEmbeddings global;
  bool has_nfsm = false;

  using Named = std::vector<std::pair<std::string, Tensor>>;

  // Stable order; tensors are shared handles onto the live parameters.
  Named named_parameters() const {
    Named out;
    auto block = [&out](const std::string& pre, const AttentionBlockParams& b) {
      out.emplace_back(pre + ".wq", b.wq);
      out.emplace_back(pre + ".wk", b.wk);
      out.emplace_back(pre + ".wv", b.wv);
      out.emplace_back(pre + ".wo", b.wo);
      out.emplace_back(pre + ".w1", b.w1);
      out.emplace_back(pre + ".b1", b.b1);
      out.emplace_back(pre + ".w2", b.w2);
      out.emplace_back(pre + ".b2", b.b2);
    };
    out.emplace_back("backbone.input.weight", backbone.input_w);
    out.emplace_back("backbone.input.bias", backbone.input_b);
    block("backbone.encoder", backbone.encoder);
    out.emplace_back("head.classifier.weight", backbone.classifier_w);
    out.emplace_back("head.classifier.bias", backbone.classifier_b);
    if (has_nfsm) {
      block("forecast.0", backbone.forecast[0]);
      block("forecast.1", backbone.forecast[1]);
      out.emplace_back("head.dynamic.weight", backbone.dynamic_w);
      out.emplace_back("head.dynamic.bias", backbone.dynamic_b);
      out.emplace_back("nfsm.global_embeddings", global.e_g);
    }
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> ps;
    for (auto& [name, t] : named_parameters()) ps.push_back(t);
    return ps;
  }
};

// Parameters that stay trainable when the backbone is frozen.
inline bool trainable_when_frozen(const std::string& name) {
  return name.starts_with("forecast.") || name.starts_with("head.dynamic.") || name.starts_with("nfsm.");
}

// Expected shape of every parameter for a configuration.
inline std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c, bool with_nfsm) {
  std::vector<std::pair<std::string, Shape>> out;
  auto block = [&out, d = c.d](const std::string& pre) {
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) out.emplace_back(pre + w, Shape{d, d});
    out.emplace_back(pre + ".w1", Shape{d, 2 * d});
    out.emplace_back(pre + ".b1", Shape{2 * d});
    out.emplace_back(pre + ".w2", Shape{2 * d, d});
    out.emplace_back(pre + ".b2", Shape{d});
  };
  out.emplace_back("backbone.input.weight", Shape{c.feat_dim, c.spatial_tokens * c.d});
  out.emplace_back("backbone.input.bias", Shape{c.spatial_tokens * c.d});
  block("backbone.encoder");
  out.emplace_back("head.classifier.weight", Shape{c.d, c.s});
  out.emplace_back("head.classifier.bias", Shape{c.s});
  if (with_nfsm) {
    block("forecast.0");
    block("forecast.1");
    out.emplace_back("head.dynamic.weight", Shape{c.d, c.s * c.d});
    out.emplace_back("head.dynamic.bias", Shape{c.s * c.d});
    out.emplace_back("nfsm.global_embeddings", Shape{c.s, c.d});
  }
  return out;
}

inline Model init_baseline_model(const ModelConfig& cfg, std::mt19937_64& rng) {
  validate(cfg);
  Model m;
  m.cfg = cfg;
  auto& b = m.backbone;
  b.input_w = detail::gaussian({cfg.feat_dim, cfg.spatial_tokens * cfg.d},
                               1.0 / std::sqrt(static_cast<double>(cfg.feat_dim)), rng);
  b.input_b = detail::zero_param({cfg.spatial_tokens * cfg.d});
  b.encoder = init_attention_block(cfg.d, rng);
  b.classifier_w = detail::gaussian({cfg.d, cfg.s}, 1.0 / std::sqrt(static_cast<double>(cfg.d)), rng);
  b.classifier_b = detail::zero_param({cfg.s});
  return m;
}

// Adds freshly initialised forecasting blocks, dynamic head and e_g.
// With `identity_forecast` the forecasting blocks start as identity maps,
// so the current-frame head initially reproduces the baseline classifier.
inline void attach_nfsm(Model& m, std::mt19937_64& rng, bool identity_forecast = true) {
  const auto& c = m.cfg;
  auto& b = m.backbone;
  b.forecast[0] = init_attention_block(c.d, rng, identity_forecast);
  b.forecast[1] = init_attention_block(c.d, rng, identity_forecast);
  b.dynamic_w = detail::gaussian({c.d, c.s * c.d}, 1.0 / std::sqrt(static_cast<double>(c.d)), rng);
  b.dynamic_b = detail::zero_param({c.s * c.d});
  m.global = GlobalStateEmbeddings::init(c.s, c.d, rng);
  m.has_nfsm = true;
}

inline Model init_full_model(const ModelConfig& cfg, std::mt19937_64& rng, bool identity_forecast = true) {
  Model m = init_baseline_model(cfg, rng);
  attach_nfsm(m, rng, identity_forecast);
  return m;
}

// ---- forward passes -----------------------------------------------------------

inline Tensor forward_baseline(const Model& m, const Tensor& history_features) {
  return head_baseline_probs(m.backbone, m.cfg, encode_history(m.backbone, m.cfg, history_features));
}

struct NfsmOutputs {
  Tensor p_hat;  // [s]
  Tensor dynamic_embeddings;  // (n+m) x s x d
  TransitionProbSet transitions;
};

// Embeddings of the m frames after t, taken from encoder windows that end
// inside t+1..t+m (offline use only).
inline Tensor encode_real_future(const Model& m, const VideoSequence& v, std::size_t t) {
  const auto& c = m.cfg;
  const std::size_t hw = c.spatial_tokens;
  Tensor out;
  bool first = true;
  for (std::size_t covered = 0; covered < c.m;) {
    const std::size_t take = std::min(c.n, c.m - covered);
    const auto end = static_cast<std::ptrdiff_t>(t + covered + take);
    Tensor enc = encode_history(m.backbone, c, frame_block(v, end - static_cast<std::ptrdiff_t>(c.n) + 1, c.n, c.feat_dim));
    Tensor tail = slice_rows(enc, (c.n - take) * hw, c.n * hw);
    out = first ? tail : concat_rows(out, tail);
    first = false;
    covered += take;
  }
  return out;
}

// Full NFSM window pass. `future` (offline) replaces the pseudo-future rows.
inline NfsmOutputs forward_nfsm(const Model& m, const Tensor& history_features, const Tensor* future = nullptr) {
  if (!m.has_nfsm) throw ConfigError("model has no NFSM heads");
  const auto& c = m.cfg;
  Tensor history = encode_history(m.backbone, c, history_features);
  Tensor combined = future ? concat_rows(history, *future) : pad_pseudo_future(history, c.m, c.spatial_tokens);
  Tensor f = forecast(m.backbone, c, combined);
  NfsmOutputs out;
  out.p_hat = head_current_probs(m.backbone, c, f);
  out.dynamic_embeddings = head_dynamic_embeddings(m.backbone, c, f);
  out.transitions = transition_prob_set(out.dynamic_embeddings, m.global.e_g, out.p_hat);
  return out;
}

}  // namespace nfsm
