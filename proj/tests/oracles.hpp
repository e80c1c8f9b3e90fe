#pragma once

// Reference computations written independently of the library's streaming
// code: plain window-by-window recomputation with explicit index arithmetic.

#include <algorithm>
#include <random>
#include <vector>

#include "nfsm/inference.hpp"

namespace oracles {

using nfsm::Distribution;

inline nfsm::Tensor causal_window(const nfsm::VideoSequence& v, std::size_t t, const nfsm::ModelConfig& c) {
  std::vector<double> x;
  x.reserve(c.n * c.feat_dim);
  for (std::size_t k = 0; k < c.n; ++k) {
    const long long idx = static_cast<long long>(t) - static_cast<long long>(c.n) + 1 + static_cast<long long>(k);
    const auto& f = v.frames[static_cast<std::size_t>(std::max(0LL, idx))].features;
    for (float e : f) x.push_back(e);
  }
  return nfsm::Tensor({c.n, c.feat_dim}, x);
}

// p_t for sources B and C. Window t - j forecasts frame t through its row
// n - 1 + j; contributions are averaged oldest first.
inline std::vector<Distribution> online_predictions(const nfsm::Model& m, const nfsm::VideoSequence& v,
                                                    nfsm::Source src) {
  const auto& c = m.cfg;
  std::vector<std::vector<double>> probs(v.size());
  std::vector<Distribution> out;
  for (std::size_t t = 0; t < v.size(); ++t) {
    auto o = nfsm::forward_nfsm(m, causal_window(v, t, c));
    probs[t] = o.transitions.probs.values();
    const Distribution p_hat = o.p_hat.values();
    const std::size_t k = std::min(t, c.m);
    if (src == nfsm::Source::B || k == 0) {
      out.push_back(p_hat);
      continue;
    }
    Distribution tilde(c.s, 0.0);
    for (std::size_t from = t - k; from < t; ++from) {
      const std::size_t row = c.n - 1 + (t - from);
      for (std::size_t j = 0; j < c.s; ++j) tilde[j] += probs[from][row * c.s + j];
    }
    for (double& e : tilde) e /= static_cast<double>(k);
    Distribution p(c.s);
    double z = 0.0;
    for (std::size_t j = 0; j < c.s; ++j) {
      p[j] = p_hat[j] * tilde[j];
      z += p[j];
    }
    if (z < 1e-12) {
      out.push_back(p_hat);
      continue;
    }
    for (double& e : p) e /= z;
    out.push_back(p);
  }
  return out;
}

// Number of frames t whose streamed p_t changes when frame t+1 is replaced
// by unrelated noise. Each check restreams the prefix 0..t+1 from scratch.
inline std::size_t causality_violations(const nfsm::Model& m, const nfsm::VideoSequence& v, std::uint64_t seed,
                                        nfsm::Source src = nfsm::Source::C) {
  const auto base = nfsm::run_online(m, v, src);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 3.0f);
  std::size_t bad = 0;
  for (std::size_t t = 0; t + 1 < v.size(); ++t) {
    nfsm::TransitionBuffer buf(m.cfg.m);
    nfsm::StreamHistory h;
    std::vector<float> noise(m.cfg.feat_dim);
    for (auto& e : noise) e = g(rng);
    Distribution p_t;
    for (std::size_t k = 0; k <= t + 1; ++k) {
      const auto& f = k == t + 1 ? noise : v.frames[k].features;
      auto r = nfsm::stream_step(m, buf, f, h, src);
      if (k == t) p_t = r.p;
    }
    if (p_t != base[t].p) ++bad;
  }
  return bad;
}

}  // namespace oracles
