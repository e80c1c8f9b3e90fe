#pragma once

// Learnable global state embeddings and per-position dynamic transition
// tables. Row a of a table is the distribution of the target frame's phase
// given that the current frame is in phase a, so propagation is p_hat * T.

#include <cmath>
#include <random>
#include <vector>

#include "nfsm/tensor.hpp"

namespace nfsm {

struct GlobalStateEmbeddings {
  Tensor e_g;  // s x d

  // Entries ~ N(0, 1/d), giving unit-scale logits at initialisation.
  static GlobalStateEmbeddings init(std::size_t s, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> v(s * d);
    for (double& x : v) x = sd * g(rng);
    return {Tensor::parameter({s, d}, std::move(v))};
  }
};

// softmax over each row of e_dt_i * e_g^T / sqrt(d).
inline Tensor transition_table(const Tensor& e_dt_i, const Tensor& e_g) {
  if (e_dt_i.rank() != 2 || e_dt_i.shape() != e_g.shape())
    throw ShapeError("transition_table: e_dt_i " + shape_str(e_dt_i.shape()) + " vs e_g " + shape_str(e_g.shape()));
  const double inv = 1.0 / std::sqrt(static_cast<double>(e_g.dim(1)));
  return softmax_last(scale(matmul(e_dt_i, transpose(e_g)), inv));
}

inline Tensor transition_probs(const Tensor& table, const Tensor& p_hat) {
  const std::size_t s = p_hat.size();
  if (table.rank() != 2 || table.dim(0) != s || table.dim(1) != s)
    throw ShapeError("transition_probs: table " + shape_str(table.shape()) + " vs p_hat " + shape_str(p_hat.shape()));
  return reshape(matmul(reshape(p_hat, {1, s}), table), {s});
}

struct TransitionProbSet {
  Tensor probs;               // (n+m) x s, row i for frame t-n+1+i
  std::vector<Tensor> tables;  // n+m tables, s x s each
};

inline TransitionProbSet transition_prob_set(const Tensor& e_dt, const Tensor& e_g, const Tensor& p_hat) {
  if (e_dt.rank() != 3 || e_dt.dim(1) != e_g.dim(0) || e_dt.dim(2) != e_g.dim(1) || p_hat.size() != e_g.dim(0))
    throw ShapeError("transition_prob_set: e_dt " + shape_str(e_dt.shape()) + ", e_g " + shape_str(e_g.shape()) +
                     ", p_hat " + shape_str(p_hat.shape()));
  const std::size_t positions = e_dt.dim(0), s = e_dt.dim(1), d = e_dt.dim(2);
  Tensor flat = reshape(e_dt, {positions * s, d});
  TransitionProbSet out;
  std::vector<Tensor> rows;
  rows.reserve(positions);
  out.tables.reserve(positions);
  for (std::size_t i = 0; i < positions; ++i) {
    Tensor table = transition_table(slice_rows(flat, i * s, (i + 1) * s), e_g);
    rows.push_back(transition_probs(table, p_hat));
    out.tables.push_back(std::move(table));
  }
  out.probs = stack_rows(rows);
  return out;
}

}  // namespace nfsm
