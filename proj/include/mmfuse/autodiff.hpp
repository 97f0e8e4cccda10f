#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kMinRowNorm = 1e-12;

enum class OpTag : std::uint8_t {
  leaf,
  matmul,
  linear,
  gelu,
  layer_norm,
  l2_normalize_rows,
  masked_softmax_rows,
  scatter_rows,
  concat_cols,
  concat_rows,
  scale_rows_by_column,
  add,
  scale,
  multiply_constant,
  sum,
  cross_entropy,
  supcon,
};

// Handle to a node in a Graph.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

// Tape of nodes in creation order. Creation order is a topological order, so
// backward() walks ids from the root down to zero, visiting every node once.
// A graph is confined to one thread.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Var constant(Tensor2 value);
  Var parameter(Tensor2 value);
  // Appends a node computed from `parents`. The node requires a gradient iff
  // any parent does; `backward` is dropped otherwise.
  Var record(Tensor2 value, std::vector<Var> parents, OpTag op, BackwardFn backward);

  const Tensor2& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  OpTag op(Var v) const { return nodes_.at(v.id).op; }
  std::span<const Var> parents(Var v) const { return nodes_.at(v.id).parents; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the last backward() root w.r.t. v; zeros if v was not reached.
  Tensor2 gradient(Var v) const;

  // Accumulator for v's gradient, allocated on first use; nullptr if v does
  // not require a gradient. Used by backward rules.
  Tensor2* grad_sink(Var v);
  // Gradient flowing into node `self` from its consumers.
  const Tensor2& upstream(std::size_t self) const { return nodes_[self].grad; }

  // Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root);

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    std::vector<Var> parents;
    BackwardFn backward;
    OpTag op = OpTag::leaf;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// out = x W + b (b broadcast over rows; b is 1 x k).
Var linear(Graph& g, Var x, Var w, Var b);
Var matmul(Graph& g, Var x, Var w);
// Exact erf-based GELU.
Var gelu(Graph& g, Var x);
// Per-row standardization (biased variance) followed by gain/bias (1 x cols).
Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps = kLayerNormEps);
// Throws DegenerateEmbeddingError when a row norm is below kMinRowNorm.
Var l2_normalize_rows(Graph& g, Var x);

enum class EmptyRowPolicy : std::uint8_t { reject, zero };
// Row-wise softmax restricted to entries with mask != 0 (mask is row-major,
// same shape as scores). Masked entries are exactly zero. Rows without any
// set bit either throw ConfigError or produce a zero row.
Var masked_softmax_rows(Graph& g, Var scores, std::span<const std::uint8_t> mask,
                        EmptyRowPolicy empty_rows = EmptyRowPolicy::reject);

// Places row i of x at row rows[i] of a zero matrix with total_rows rows.
Var scatter_rows(Graph& g, Var x, std::span<const std::size_t> rows, std::size_t total_rows);
Var concat_cols(Graph& g, std::span<const Var> parts);
Var concat_rows(Graph& g, std::span<const Var> parts);
// out(i, :) = x(i, :) * weights(i, column)
Var scale_rows_by_column(Graph& g, Var x, Var weights, std::size_t column);
Var add(Graph& g, Var a, Var b);
Var scale(Graph& g, Var x, double factor);
// Elementwise product with a constant tensor (dropout masks).
Var multiply_constant(Graph& g, Var x, Tensor2 factors);
// Sum of all entries as a 1x1 node.
Var sum(Graph& g, Var x);

double gelu_value(double x);
double gelu_derivative(double x);
// Softmax over entries whose mask bit is set; ConfigError on an empty mask.
std::vector<double> masked_softmax(std::span<const double> scores, std::span<const std::uint8_t> mask);

// Central-difference check of a scalar-valued op at `point`. Returns
// max_i |g_ad - g_fd| / max(1, |g_fd|).
using ScalarOp = std::function<Var(Graph&, Var)>;
double grad_check(const ScalarOp& op, const Tensor2& point, double fd_step = 1e-5);

}  // namespace mmfuse
