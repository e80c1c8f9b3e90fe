#pragma once

// Windowed encoder, pseudo-future padding, the two forecasting attention
// blocks and the two output heads.
//
// Token layout: a window of L frames with hw spatial tokens per frame is a
// (L*hw) x d matrix in frame-major order. Spatial pooling averages the hw
// tokens of each frame and is the identity when hw == 1.

#include <cmath>
#include <random>
#include <vector>

#include "nfsm/config.hpp"
#include "nfsm/tensor.hpp"
#include "nfsm/workflow_sim.hpp"

namespace nfsm {

// Pre-norm single-head self-attention block with a 2d-wide ReLU MLP.
struct AttentionBlockParams {
  Tensor wq, wk, wv, wo;  // d x d
  Tensor w1, b1;          // d x 2d, 2d
  Tensor w2, b2;          // 2d x d, d
};

struct BackboneParams {
  Tensor input_w, input_b;  // feat_dim x (hw*d), hw*d
  AttentionBlockParams encoder;
  Tensor classifier_w, classifier_b;  // d x s, s
  AttentionBlockParams forecast[2];
  Tensor dynamic_w, dynamic_b;  // d x (s*d), s*d
};

namespace detail {

inline Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = stddev * g(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

inline Tensor zero_param(Shape shape) {
  auto n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, 0.0));
}

}  // namespace detail

// Weights ~ N(0, 1/fan_in), biases zero. With `zero_output` the two
// residual-branch output projections start at zero so the block is the
// identity map at initialisation.
inline AttentionBlockParams init_attention_block(std::size_t d, std::mt19937_64& rng, bool zero_output = false) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sd2 = 1.0 / std::sqrt(static_cast<double>(2 * d));
  AttentionBlockParams p;
  p.wq = detail::gaussian({d, d}, sd, rng);
  p.wk = detail::gaussian({d, d}, sd, rng);
  p.wv = detail::gaussian({d, d}, sd, rng);
  p.wo = zero_output ? detail::zero_param({d, d}) : detail::gaussian({d, d}, sd, rng);
  p.w1 = detail::gaussian({d, 2 * d}, sd, rng);
  p.b1 = detail::zero_param({2 * d});
  p.w2 = zero_output ? detail::zero_param({2 * d, d}) : detail::gaussian({2 * d, d}, sd2, rng);
  p.b2 = detail::zero_param({d});
  return p;
}

inline Tensor attention_block(const AttentionBlockParams& p, const Tensor& x) {
  Tensor h = layer_norm_last(x);
  Tensor att = scaled_dot_attention(matmul(h, p.wq), matmul(h, p.wk), matmul(h, p.wv));
  Tensor x1 = add(x, matmul(att, p.wo));
  Tensor h2 = layer_norm_last(x1);
  Tensor ff = add_bias(matmul(relu(add_bias(matmul(h2, p.w1), p.b1)), p.w2), p.b2);
  return add(x1, ff);
}

// Sinusoidal code for frame positions 0..frames-1, repeated per spatial token.
inline Tensor position_encoding(std::size_t frames, std::size_t hw, std::size_t d) {
  std::vector<double> v(frames * hw * d);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t k = 0; k < d; ++k) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(d));
      const double code = (k % 2 == 0) ? std::sin(static_cast<double>(f) * rate) : std::cos(static_cast<double>(f) * rate);
      for (std::size_t h = 0; h < hw; ++h) v[(f * hw + h) * d + k] = code;
    }
  return Tensor({frames * hw, d}, std::move(v));
}

inline Tensor spatial_pool(const Tensor& tokens, std::size_t hw) {
  if (hw == 1) return tokens;
  const std::size_t frames = tokens.dim(0) / hw;
  return mean_over_axis(reshape(tokens, {frames, hw, tokens.dim(1)}), 1);
}

// features: n x feat_dim -> (n*hw) x d history embedding.
inline Tensor encode_history(const BackboneParams& p, const ModelConfig& cfg, const Tensor& features,
                             bool with_position = true) {
  if (features.rank() != 2 || features.dim(1) != cfg.feat_dim || features.dim(0) != cfg.n)
    throw ShapeError("encode_history: expected " + shape_str({cfg.n, cfg.feat_dim}) + ", got " +
                     shape_str(features.shape()));
  const std::size_t hw = cfg.spatial_tokens;
  Tensor tokens = reshape(add_bias(matmul(features, p.input_w), p.input_b), {cfg.n * hw, cfg.d});
  if (with_position) tokens = add(tokens, position_encoding(cfg.n, hw, cfg.d));
  return attention_block(p.encoder, tokens);
}

// Appends m copies of the last frame's tokens. Reads nothing past that frame.
inline Tensor pad_pseudo_future(const Tensor& history, std::size_t m, std::size_t hw = 1) {
  if (history.rank() != 2 || history.dim(0) % hw != 0 || history.dim(0) < hw)
    throw ShapeError("pad_pseudo_future: bad history shape " + shape_str(history.shape()));
  const std::size_t n = history.dim(0) / hw;
  std::vector<std::size_t> rows;
  rows.reserve((n + m) * hw);
  for (std::size_t r = 0; r < n * hw; ++r) rows.push_back(r);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t h = 0; h < hw; ++h) rows.push_back((n - 1) * hw + h);
  return gather_rows(history, std::move(rows));
}

// Two attention blocks over the (n+m)*hw tokens, then spatial pooling.
inline Tensor forecast(const BackboneParams& p, const ModelConfig& cfg, const Tensor& combined) {
  if (combined.rank() != 2 || combined.dim(0) != cfg.span() * cfg.spatial_tokens || combined.dim(1) != cfg.d)
    throw ShapeError("forecast: expected " + shape_str({cfg.span() * cfg.spatial_tokens, cfg.d}) + ", got " +
                     shape_str(combined.shape()));
  Tensor x = attention_block(p.forecast[0], combined);
  x = attention_block(p.forecast[1], x);
  return spatial_pool(x, cfg.spatial_tokens);
}

namespace detail {

inline Tensor classify_pooled(const BackboneParams& p, const ModelConfig& cfg, const Tensor& frames) {
  Tensor pooled = reshape(mean_over_axis(slice_rows(frames, 0, cfg.n), 0), {1, cfg.d});
  Tensor logits = add_bias(matmul(pooled, p.classifier_w), p.classifier_b);
  return reshape(softmax_last(logits), {cfg.s});
}

}  // namespace detail

// Current-frame distribution from the mean of the n history positions.
inline Tensor head_current_probs(const BackboneParams& p, const ModelConfig& cfg, const Tensor& forecast_out) {
  if (forecast_out.rank() != 2 || forecast_out.dim(0) != cfg.span() || forecast_out.dim(1) != cfg.d)
    throw ShapeError("head_current_probs: expected " + shape_str({cfg.span(), cfg.d}) + ", got " +
                     shape_str(forecast_out.shape()));
  return detail::classify_pooled(p, cfg, forecast_out);
}

// Baseline path: classifier applied directly to the pooled history embedding.
inline Tensor head_baseline_probs(const BackboneParams& p, const ModelConfig& cfg, const Tensor& history) {
  return detail::classify_pooled(p, cfg, spatial_pool(history, cfg.spatial_tokens));
}

// (n+m) x d -> (n+m) x s x d dynamic state embeddings.
inline Tensor head_dynamic_embeddings(const BackboneParams& p, const ModelConfig& cfg, const Tensor& forecast_out) {
  if (forecast_out.rank() != 2 || forecast_out.dim(0) != cfg.span() || forecast_out.dim(1) != cfg.d)
    throw ShapeError("head_dynamic_embeddings: expected " + shape_str({cfg.span(), cfg.d}) + ", got " +
                     shape_str(forecast_out.shape()));
  Tensor flat = add_bias(matmul(forecast_out, p.dynamic_w), p.dynamic_b);
  return reshape(flat, {cfg.span(), cfg.s, cfg.d});
}

// ---- windows ----------------------------------------------------------------

// Clamped frame index relative to t; negative offsets repeat frame 0,
// offsets past the end repeat the last frame.
inline std::size_t clamp_frame(std::ptrdiff_t idx, std::size_t length) {
  if (idx < 0) return 0;
  return std::min(static_cast<std::size_t>(idx), length - 1);
}

// Features of frames first..first+count-1 (clamped into the video).
inline Tensor frame_block(const VideoSequence& v, std::ptrdiff_t first, std::size_t count, std::size_t feat_dim) {
  std::vector<double> x(count * feat_dim);
  for (std::size_t k = 0; k < count; ++k) {
    const auto& f = v.frames[clamp_frame(first + static_cast<std::ptrdiff_t>(k), v.size())].features;
    if (f.size() != feat_dim) throw ShapeError("frame feature width " + std::to_string(f.size()) + " != " + std::to_string(feat_dim));
    std::copy(f.begin(), f.end(), x.begin() + static_cast<std::ptrdiff_t>(k * feat_dim));
  }
  return Tensor({count, feat_dim}, std::move(x));
}

struct WindowSample {
  Tensor features;  // n x feat_dim, frames t-n+1..t
  std::size_t current_label = 0;
  std::vector<std::size_t> context_labels;  // n+m labels, frames t-n+1..t+m
};

inline WindowSample make_window(const VideoSequence& v, std::size_t t, const ModelConfig& cfg) {
  if (t >= v.size()) throw ArgumentError("make_window: frame index out of range");
  const auto first = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(cfg.n) + 1;
  WindowSample w{frame_block(v, first, cfg.n, cfg.feat_dim), v.frames[t].label, {}};
  w.context_labels.reserve(cfg.span());
  for (std::size_t k = 0; k < cfg.span(); ++k)
    w.context_labels.push_back(v.frames[clamp_frame(first + static_cast<std::ptrdiff_t>(k), v.size())].label);
  return w;
}

}  // namespace nfsm
