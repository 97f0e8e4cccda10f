#pragma once

// Independent oracles and fixtures shared by the unit tests and the
// acceptance runner. Nothing here calls the code paths it is used to check.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/objectives.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse::testing {

inline Tensor2 random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor2 t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Fixed random weights so that a matrix-valued op becomes a scalar with a
// non-degenerate gradient.
inline Var weighted_sum(Graph& g, Var x, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor2& v = g.value(x);
  return sum(g, multiply_constant(g, x, random_tensor(v.rows(), v.cols(), rng, -1.0, 1.0)));
}

// P(pos > neg) + 0.5 P(tie) by counting every pair.
inline double pair_count_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Supervised contrastive loss written as plain nested sums.
inline double direct_supcon(const std::vector<std::vector<double>>& h, const std::vector<std::size_t>& subject,
                            const std::vector<int>& y1, const std::vector<int>& y2, double tau) {
  const std::size_t n = h.size();
  auto dot = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t k = 0; k < h[a].size(); ++k) s += h[a][k] * h[b][k];
    return s;
  };
  double total = 0.0;
  std::size_t anchors = 0;
  for (std::size_t a = 0; a < n; ++a) {
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != a) denom += std::exp(dot(a, k) / tau);
    double acc = 0.0;
    std::size_t positives = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a) continue;
      const bool same_subject = subject[p] == subject[a];
      const bool y1_match = y1[p] == y1[a];
      const bool y2_match = y2[p] != -1 && y2[a] != -1 && y2[p] == y2[a];
      if (!(same_subject || y1_match || y2_match)) continue;
      ++positives;
      acc += std::log(std::exp(dot(a, p) / tau) / denom);
    }
    if (positives == 0) continue;
    total += -acc / double(positives);
    ++anchors;
  }
  return anchors == 0 ? 0.0 : total / double(anchors);
}

// Exact per-modality drop probability under "drop each bit with p, reject the
// all-dropped outcome", by enumerating the 16 outcomes of a full mask.
inline std::array<double, kModalityCount> enumerated_drop_rates(double p) {
  std::array<double, kModalityCount> dropped{};
  double kept_mass = 0.0;
  for (unsigned outcome = 0; outcome < (1u << kModalityCount); ++outcome) {
    if (outcome == 0) continue;  // bit set = modality retained; empty outcome excluded
    double prob = 1.0;
    for (std::size_t m = 0; m < kModalityCount; ++m) prob *= (outcome >> m & 1u) ? (1.0 - p) : p;
    kept_mass += prob;
    for (std::size_t m = 0; m < kModalityCount; ++m)
      if (!(outcome >> m & 1u)) dropped[m] += prob;
  }
  for (double& d : dropped) d /= kept_mass;
  return dropped;
}

inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.embed_dim = 6;
  c.proj_hidden = 5;
  c.proj_dim = 4;
  c.shared_hidden = {5, 4};
  return c;
}

// Small cohort with mixed presence and some missing durability labels.
inline Dataset tiny_dataset(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) d.subject_ids.push_back("T" + std::to_string(100 + i));
  for (auto& z : d.embeddings) z = random_tensor(n, dim, rng);
  d.presence.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    do {
      for (std::size_t m = 0; m < kModalityCount; ++m) d.presence[i][m] = rng.bernoulli(0.7);
    } while (d.presence[i].none());
  }
  d.metadata = Tensor2(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    d.metadata(i, 0) = double(rng.bernoulli(0.5));
    d.metadata(i, 1) = double(rng.bernoulli(0.5));
  }
  for (std::size_t i = 0; i < n; ++i) {
    d.y1.push_back(int(i % 2));
    d.y2.push_back(i % 3 == 0 ? -1 : int((i / 2) % 2));
    d.cohort.push_back(2020);
  }
  return d;
}

// Max relative gradient error of the full training loss w.r.t. every
// parameter tensor, with the forward draws fixed by `draw_seed`.
inline double full_loss_grad_check(const ModelConfig& config, const ModelParams& params, const Dataset& data,
                                   const std::vector<std::size_t>& rows, std::uint64_t draw_seed,
                                   double fd_step = 1e-5) {
  const auto param_ptrs = flatten(params);
  std::vector<ModalityMask> masks;
  std::vector<int> y1, y2;
  for (std::size_t r : rows) {
    masks.push_back(data.presence[r]);
    y1.push_back(data.y1[r]);
    y2.push_back(data.y2[r]);
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < param_ptrs.size(); ++k) {
    const ScalarOp op = [&](Graph& g, Var x) {
      ModelVars vars;
      auto var_ptrs = flatten(vars);
      for (std::size_t j = 0; j < param_ptrs.size(); ++j) *var_ptrs[j] = j == k ? x : g.constant(*param_ptrs[j]);
      Rng rng(draw_seed);
      const ForwardOptions options{true, 0.4, &rng};
      const ForwardResult fr = forward(g, vars, config, data, rows, masks, options);
      return joint_objective(g, fr, y1, y2, ObjectiveWeights{}).total;
    };
    worst = std::max(worst, grad_check(op, *param_ptrs[k], fd_step));
  }
  return worst;
}

// Every registered differentiable operation as a scalar function of one
// input, with the other operands held fixed.
struct OpCase {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  ScalarOp op;
};

inline std::vector<OpCase> registered_op_cases() {
  Rng rng(2024);
  const Tensor2 w = random_tensor(3, 4, rng);
  const Tensor2 b = random_tensor(1, 4, rng);
  const Tensor2 x = random_tensor(2, 3, rng);
  const Tensor2 gain = random_tensor(1, 5, rng);
  const Tensor2 bias = random_tensor(1, 5, rng);
  const Tensor2 weights = random_tensor(3, 2, rng);
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 1, 1, 0, 1, 0, 0, 0, 0};
  const std::vector<std::size_t> scatter{3, 0, 1};
  std::vector<OpCase> cases;
  cases.push_back({"linear/x", 2, 3, [=](Graph& g, Var v) {
                     return weighted_sum(g, linear(g, v, g.constant(w), g.constant(b)), 1);
                   }});
  cases.push_back({"linear/W", 3, 4, [=](Graph& g, Var v) {
                     return weighted_sum(g, linear(g, g.constant(x), v, g.constant(b)), 2);
                   }});
  cases.push_back({"linear/b", 1, 4, [=](Graph& g, Var v) {
                     return weighted_sum(g, linear(g, g.constant(x), g.constant(w), v), 3);
                   }});
  cases.push_back({"matmul/x", 2, 3, [=](Graph& g, Var v) { return weighted_sum(g, matmul(g, v, g.constant(w)), 4); }});
  cases.push_back({"matmul/W", 3, 4, [=](Graph& g, Var v) { return weighted_sum(g, matmul(g, g.constant(x), v), 5); }});
  cases.push_back({"gelu", 3, 4, [](Graph& g, Var v) { return weighted_sum(g, gelu(g, v), 6); }});
  cases.push_back({"layer_norm/x", 3, 5, [=](Graph& g, Var v) {
                     return weighted_sum(g, layer_norm(g, v, g.constant(gain), g.constant(bias)), 7);
                   }});
  cases.push_back({"layer_norm/gain", 1, 5, [=](Graph& g, Var v) {
                     Rng r(8);
                     return weighted_sum(g, layer_norm(g, g.constant(random_tensor(3, 5, r)), v, g.constant(bias)), 9);
                   }});
  cases.push_back({"layer_norm/bias", 1, 5, [=](Graph& g, Var v) {
                     Rng r(10);
                     return weighted_sum(g, layer_norm(g, g.constant(random_tensor(3, 5, r)), g.constant(gain), v), 11);
                   }});
  cases.push_back({"l2_normalize_rows", 3, 4, [](Graph& g, Var v) { return weighted_sum(g, l2_normalize_rows(g, v), 12); }});
  cases.push_back({"masked_softmax_rows", 3, 4, [=](Graph& g, Var v) {
                     return weighted_sum(g, masked_softmax_rows(g, v, mask, EmptyRowPolicy::zero), 13);
                   }});
  cases.push_back({"scatter_rows", 3, 2, [=](Graph& g, Var v) { return weighted_sum(g, scatter_rows(g, v, scatter, 5), 14); }});
  cases.push_back({"concat_cols", 2, 3, [=](Graph& g, Var v) {
                     const std::array<Var, 3> parts{v, g.constant(x), v};
                     return weighted_sum(g, concat_cols(g, parts), 15);
                   }});
  cases.push_back({"concat_rows", 2, 3, [=](Graph& g, Var v) {
                     const std::array<Var, 3> parts{g.constant(x), v, v};
                     return weighted_sum(g, concat_rows(g, parts), 16);
                   }});
  cases.push_back({"scale_rows_by_column/x", 3, 4, [=](Graph& g, Var v) {
                     return weighted_sum(g, scale_rows_by_column(g, v, g.constant(weights), 1), 17);
                   }});
  cases.push_back({"scale_rows_by_column/weights", 3, 2, [=](Graph& g, Var v) {
                     Rng r(18);
                     return weighted_sum(g, scale_rows_by_column(g, g.constant(random_tensor(3, 4, r)), v, 1), 19);
                   }});
  cases.push_back({"add", 2, 3, [=](Graph& g, Var v) { return weighted_sum(g, add(g, v, g.constant(x)), 20); }});
  cases.push_back({"scale", 2, 3, [](Graph& g, Var v) { return weighted_sum(g, scale(g, v, -1.7), 21); }});
  cases.push_back({"multiply_constant", 2, 3, [=](Graph& g, Var v) {
                     return sum(g, multiply_constant(g, v, x));
                   }});
  cases.push_back({"sum", 2, 3, [](Graph& g, Var v) { return sum(g, v); }});
  cases.push_back({"masked_cross_entropy", 5, 2, [](Graph& g, Var v) {
                     const std::vector<int> labels{1, -1, 0, 0, 1};
                     return masked_cross_entropy(g, v, labels);
                   }});
  cases.push_back({"supcon_loss", 5, 3, [](Graph& g, Var v) {
                     ContrastiveLabels labels{{0, 0, 1, 2, 3}, {1, 1, 0, 1, 0}, {-1, -1, 1, 0, 1}};
                     return supcon_loss(g, l2_normalize_rows(g, v), labels, 0.3);
                   }});
  cases.push_back({"total_loss", 4, 2, [](Graph& g, Var v) {
                     Rng r(22);
                     const Var other = g.constant(random_tensor(4, 2, r));
                     const std::vector<int> y1{1, 0, 1, 0};
                     const std::vector<int> y2{-1, 1, 0, -1};
                     const Var con = sum(g, scale(g, v, 0.05));
                     return total_loss(g, v, other, y1, y2, con, 2.0, 0.1).total;
                   }});
  cases.push_back({"total_loss/durability", 4, 2, [](Graph& g, Var v) {
                     Rng r(23);
                     const Var other = g.constant(random_tensor(4, 2, r));
                     const std::vector<int> y1{1, 0, 1, 0};
                     const std::vector<int> y2{-1, 1, 0, -1};
                     return total_loss(g, other, v, y1, y2, Var{}, 2.0, 0.0).total;
                   }});
  return cases;
}

}  // namespace mmfuse::testing
