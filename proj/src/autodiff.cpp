#include "mmfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ConfigError(std::string(op) + ": " + what);
}

std::string shape_of(const Tensor2& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

}  // namespace

Var Graph::constant(Tensor2 value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, OpTag::leaf, false});
  return Var{nodes_.size() - 1};
}

Var Graph::parameter(Tensor2 value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, OpTag::leaf, true});
  return Var{nodes_.size() - 1};
}

Var Graph::record(Tensor2 value, std::vector<Var> parents, OpTag op, BackwardFn backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
  Node node{std::move(value), {}, std::move(parents), {}, op, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Tensor2 Graph::gradient(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty() && !n.value.empty()) return Tensor2(n.value.rows(), n.value.cols());
  return n.grad;
}

Tensor2* Graph::grad_sink(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor2(n.value.rows(), n.value.cols());
  return &n.grad;
}

void Graph::backward(Var root) {
  const Tensor2& rv = value(root);
  if (rv.rows() != 1 || rv.cols() != 1) throw ConfigError("backward: root must be 1x1, got " + shape_of(rv));
  for (Node& n : nodes_) n.grad = Tensor2();
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = Tensor2(1, 1, 1.0);
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

Var matmul(Graph& g, Var x, Var w) {
  const Tensor2& xv = g.value(x);
  const Tensor2& wv = g.value(w);
  require(xv.cols() == wv.rows(), "matmul", "shape mismatch " + shape_of(xv) + " * " + shape_of(wv));
  Tensor2 out(xv.rows(), wv.cols());
  out.matrix().noalias() = xv.matrix() * wv.matrix();
  return g.record(std::move(out), {x, w}, OpTag::matmul, [x, w](Graph& gr, std::size_t self) {
    const Tensor2& dy = gr.upstream(self);
    if (Tensor2* dx = gr.grad_sink(x)) dx->matrix().noalias() += dy.matrix() * gr.value(w).matrix().transpose();
    if (Tensor2* dw = gr.grad_sink(w)) dw->matrix().noalias() += gr.value(x).matrix().transpose() * dy.matrix();
  });
}

Var linear(Graph& g, Var x, Var w, Var b) {
  const Tensor2& xv = g.value(x);
  const Tensor2& wv = g.value(w);
  const Tensor2& bv = g.value(b);
  require(xv.cols() == wv.rows(), "linear", "shape mismatch " + shape_of(xv) + " * " + shape_of(wv));
  require(bv.rows() == 1 && bv.cols() == wv.cols(), "linear", "bias shape " + shape_of(bv));
  Tensor2 out(xv.rows(), wv.cols());
  auto om = out.matrix();
  om.noalias() = xv.matrix() * wv.matrix();
  om.rowwise() += bv.matrix().row(0);
  return g.record(std::move(out), {x, w, b}, OpTag::linear, [x, w, b](Graph& gr, std::size_t self) {
    const Tensor2& dy = gr.upstream(self);
    if (Tensor2* dx = gr.grad_sink(x)) dx->matrix().noalias() += dy.matrix() * gr.value(w).matrix().transpose();
    if (Tensor2* dw = gr.grad_sink(w)) dw->matrix().noalias() += gr.value(x).matrix().transpose() * dy.matrix();
    if (Tensor2* db = gr.grad_sink(b)) db->matrix().row(0) += dy.matrix().colwise().sum();
  });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Var gelu(Graph& g, Var x) {
  const Tensor2& xv = g.value(x);
  Tensor2 out(xv.rows(), xv.cols());
  std::transform(xv.values().begin(), xv.values().end(), out.values().begin(), gelu_value);
  return g.record(std::move(out), {x}, OpTag::gelu, [x](Graph& gr, std::size_t self) {
    Tensor2* dx = gr.grad_sink(x);
    const auto dy = gr.upstream(self).values();
    const auto xs = gr.value(x).values();
    for (std::size_t i = 0; i < xs.size(); ++i) dx->data()[i] += dy[i] * gelu_derivative(xs[i]);
  });
}

Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps) {
  const Tensor2& xv = g.value(x);
  const Tensor2& gv = g.value(gain);
  const Tensor2& bv = g.value(bias);
  const std::size_t n = xv.rows();
  const std::size_t k = xv.cols();
  require(gv.rows() == 1 && gv.cols() == k, "layer_norm", "gain shape " + shape_of(gv));
  require(bv.rows() == 1 && bv.cols() == k, "layer_norm", "bias shape " + shape_of(bv));
  require(k > 0, "layer_norm", "zero columns");
  Tensor2 normalized(n, k);
  std::vector<double> inv_std(n);
  Tensor2 out(n, k);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= double(k);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= double(k);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < k; ++c) {
      normalized(r, c) = (row[c] - mean) * inv_std[r];
      out(r, c) = normalized(r, c) * gv(0, c) + bv(0, c);
    }
  }
  return g.record(std::move(out), {x, gain, bias}, OpTag::layer_norm,
                  [x, gain, bias, normalized = std::move(normalized), inv_std = std::move(inv_std)](
                      Graph& gr, std::size_t self) {
                    const Tensor2& dy = gr.upstream(self);
                    const Tensor2& gv2 = gr.value(gain);
                    const std::size_t rows = dy.rows();
                    const std::size_t cols = dy.cols();
                    if (Tensor2* dg = gr.grad_sink(gain)) {
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) (*dg)(0, c) += dy(r, c) * normalized(r, c);
                    }
                    if (Tensor2* db = gr.grad_sink(bias)) {
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) (*db)(0, c) += dy(r, c);
                    }
                    if (Tensor2* dx = gr.grad_sink(x)) {
                      std::vector<double> dxhat(cols);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double sum_d = 0.0;
                        double sum_dx = 0.0;
                        for (std::size_t c = 0; c < cols; ++c) {
                          dxhat[c] = dy(r, c) * gv2(0, c);
                          sum_d += dxhat[c];
                          sum_dx += dxhat[c] * normalized(r, c);
                        }
                        const double scale = inv_std[r] / double(cols);
                        for (std::size_t c = 0; c < cols; ++c) {
                          (*dx)(r, c) += scale * (double(cols) * dxhat[c] - sum_d - normalized(r, c) * sum_dx);
                        }
                      }
                    }
                  });
}

Var l2_normalize_rows(Graph& g, Var x) {
  const Tensor2& xv = g.value(x);
  Tensor2 out(xv.rows(), xv.cols());
  std::vector<double> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v * v;
    norms[r] = std::sqrt(s);
    if (!(norms[r] >= kMinRowNorm)) {
      throw DegenerateEmbeddingError("l2_normalize_rows: row " + std::to_string(r) + " has norm " +
                                     std::to_string(norms[r]) + " (dead projection head?)");
    }
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) / norms[r];
  }
  return g.record(std::move(out), {x}, OpTag::l2_normalize_rows,
                  [x, norms = std::move(norms)](Graph& gr, std::size_t self) {
                    Tensor2* dx = gr.grad_sink(x);
                    const Tensor2& dy = gr.upstream(self);
                    const Tensor2& y = gr.value(Var{self});
                    for (std::size_t r = 0; r < dy.rows(); ++r) {
                      double dot = 0.0;
                      for (std::size_t c = 0; c < dy.cols(); ++c) dot += y(r, c) * dy(r, c);
                      for (std::size_t c = 0; c < dy.cols(); ++c) (*dx)(r, c) += (dy(r, c) - y(r, c) * dot) / norms[r];
                    }
                  });
}

std::vector<double> masked_softmax(std::span<const double> scores, std::span<const std::uint8_t> mask) {
  require(scores.size() == mask.size(), "masked_softmax", "mask length mismatch");
  double max_score = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i]) {
      max_score = std::max(max_score, scores[i]);
      any = true;
    }
  }
  require(any, "masked_softmax", "empty mask");
  std::vector<double> out(scores.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i]) {
      out[i] = std::exp(scores[i] - max_score);
      total += out[i];
    }
  }
  for (double& v : out) v /= total;
  return out;
}

Var masked_softmax_rows(Graph& g, Var scores, std::span<const std::uint8_t> mask, EmptyRowPolicy empty_rows) {
  const Tensor2& sv = g.value(scores);
  require(mask.size() == sv.size(), "masked_softmax_rows", "mask size mismatch");
  const std::size_t cols = sv.cols();
  Tensor2 out(sv.rows(), cols);
  for (std::size_t r = 0; r < sv.rows(); ++r) {
    auto row_mask = mask.subspan(r * cols, cols);
    if (std::none_of(row_mask.begin(), row_mask.end(), [](std::uint8_t b) { return b != 0; })) {
      if (empty_rows == EmptyRowPolicy::zero) continue;
      throw ConfigError("masked_softmax_rows: row " + std::to_string(r) + " has an empty mask");
    }
    const auto probs = masked_softmax(sv.row(r), row_mask);
    std::copy(probs.begin(), probs.end(), out.row(r).begin());
  }
  return g.record(std::move(out), {scores}, OpTag::masked_softmax_rows, [scores](Graph& gr, std::size_t self) {
    Tensor2* dx = gr.grad_sink(scores);
    const Tensor2& dy = gr.upstream(self);
    const Tensor2& y = gr.value(Var{self});
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < dy.cols(); ++c) dot += y(r, c) * dy(r, c);
      // masked entries have y == 0 and receive exactly zero gradient
      for (std::size_t c = 0; c < dy.cols(); ++c) (*dx)(r, c) += y(r, c) * (dy(r, c) - dot);
    }
  });
}

Var scatter_rows(Graph& g, Var x, std::span<const std::size_t> rows, std::size_t total_rows) {
  const Tensor2& xv = g.value(x);
  require(rows.size() == xv.rows(), "scatter_rows", "row index count mismatch");
  Tensor2 out(total_rows, xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < total_rows, "scatter_rows", "row index out of range");
    std::copy(xv.row(i).begin(), xv.row(i).end(), out.row(rows[i]).begin());
  }
  std::vector<std::size_t> ids(rows.begin(), rows.end());
  return g.record(std::move(out), {x}, OpTag::scatter_rows, [x, ids = std::move(ids)](Graph& gr, std::size_t self) {
    Tensor2* dx = gr.grad_sink(x);
    const Tensor2& dy = gr.upstream(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto src = dy.row(ids[i]);
      auto dst = dx->row(i);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var concat_cols(Graph& g, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t rows = g.value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    require(g.value(p).rows() == rows, "concat_cols", "row count mismatch");
    cols += g.value(p).cols();
  }
  Tensor2 out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor2& pv = g.value(p);
    for (std::size_t r = 0; r < rows; ++r) std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + offset);
    offset += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record(std::move(out), inputs, OpTag::concat_cols, [inputs](Graph& gr, std::size_t self) {
    const Tensor2& dy = gr.upstream(self);
    std::size_t off = 0;
    for (Var p : inputs) {
      const std::size_t k = gr.value(p).cols();
      if (Tensor2* dp = gr.grad_sink(p)) {
        for (std::size_t r = 0; r < dy.rows(); ++r)
          for (std::size_t c = 0; c < k; ++c) (*dp)(r, c) += dy(r, off + c);
      }
      off += k;
    }
  });
}

Var concat_rows(Graph& g, std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  const std::size_t cols = g.value(parts[0]).cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    require(g.value(p).cols() == cols, "concat_rows", "column count mismatch");
    rows += g.value(p).rows();
  }
  Tensor2 out(rows, cols);
  auto it = out.values().begin();
  for (Var p : parts) it = std::copy(g.value(p).values().begin(), g.value(p).values().end(), it);
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record(std::move(out), inputs, OpTag::concat_rows, [inputs](Graph& gr, std::size_t self) {
    const auto dy = gr.upstream(self).values();
    std::size_t off = 0;
    for (Var p : inputs) {
      const std::size_t count = gr.value(p).size();
      if (Tensor2* dp = gr.grad_sink(p)) {
        for (std::size_t i = 0; i < count; ++i) dp->data()[i] += dy[off + i];
      }
      off += count;
    }
  });
}

Var scale_rows_by_column(Graph& g, Var x, Var weights, std::size_t column) {
  const Tensor2& xv = g.value(x);
  const Tensor2& wv = g.value(weights);
  require(wv.rows() == xv.rows() && column < wv.cols(), "scale_rows_by_column", "weights shape " + shape_of(wv));
  Tensor2 out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) * wv(r, column);
  return g.record(std::move(out), {x, weights}, OpTag::scale_rows_by_column,
                  [x, weights, column](Graph& gr, std::size_t self) {
                    const Tensor2& dy = gr.upstream(self);
                    const Tensor2& xv2 = gr.value(x);
                    const Tensor2& wv2 = gr.value(weights);
                    Tensor2* dx = gr.grad_sink(x);
                    Tensor2* dw = gr.grad_sink(weights);
                    for (std::size_t r = 0; r < dy.rows(); ++r) {
                      double dot = 0.0;
                      for (std::size_t c = 0; c < dy.cols(); ++c) {
                        if (dx) (*dx)(r, c) += dy(r, c) * wv2(r, column);
                        dot += dy(r, c) * xv2(r, c);
                      }
                      if (dw) (*dw)(r, column) += dot;
                    }
                  });
}

Var add(Graph& g, Var a, Var b) {
  const Tensor2& av = g.value(a);
  const Tensor2& bv = g.value(b);
  require(av.same_shape(bv), "add", "shape mismatch " + shape_of(av) + " + " + shape_of(bv));
  Tensor2 out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out.data()[i] = av.data()[i] + bv.data()[i];
  return g.record(std::move(out), {a, b}, OpTag::add, [a, b](Graph& gr, std::size_t self) {
    const auto dy = gr.upstream(self).values();
    for (Var p : {a, b}) {
      if (Tensor2* dp = gr.grad_sink(p)) {
        for (std::size_t i = 0; i < dy.size(); ++i) dp->data()[i] += dy[i];
      }
    }
  });
}

Var scale(Graph& g, Var x, double factor) {
  const Tensor2& xv = g.value(x);
  Tensor2 out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out.data()[i] = xv.data()[i] * factor;
  return g.record(std::move(out), {x}, OpTag::scale, [x, factor](Graph& gr, std::size_t self) {
    Tensor2* dx = gr.grad_sink(x);
    const auto dy = gr.upstream(self).values();
    for (std::size_t i = 0; i < dy.size(); ++i) dx->data()[i] += dy[i] * factor;
  });
}

Var multiply_constant(Graph& g, Var x, Tensor2 factors) {
  const Tensor2& xv = g.value(x);
  require(xv.same_shape(factors), "multiply_constant", "shape mismatch " + shape_of(xv) + " vs " + shape_of(factors));
  Tensor2 out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out.data()[i] = xv.data()[i] * factors.data()[i];
  return g.record(std::move(out), {x}, OpTag::multiply_constant,
                  [x, factors = std::move(factors)](Graph& gr, std::size_t self) {
                    Tensor2* dx = gr.grad_sink(x);
                    const auto dy = gr.upstream(self).values();
                    for (std::size_t i = 0; i < dy.size(); ++i) dx->data()[i] += dy[i] * factors.data()[i];
                  });
}

Var sum(Graph& g, Var x) {
  double total = 0.0;
  for (double v : g.value(x).values()) total += v;
  return g.record(Tensor2(1, 1, total), {x}, OpTag::sum, [x](Graph& gr, std::size_t self) {
    Tensor2* dx = gr.grad_sink(x);
    const double d = gr.upstream(self)(0, 0);
    for (double& v : dx->values()) v += d;
  });
}

double grad_check(const ScalarOp& op, const Tensor2& point, double fd_step) {
  Graph g;
  Var input = g.parameter(point);
  Var out = op(g, input);
  require(g.value(out).size() == 1, "grad_check", "op is not scalar-valued");
  g.backward(out);
  const Tensor2 analytic = g.gradient(input);

  auto evaluate = [&op](const Tensor2& at) {
    Graph probe;
    Var in = probe.constant(at);
    return probe.value(op(probe, in))(0, 0);
  };

  double worst = 0.0;
  Tensor2 shifted = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double original = point.data()[i];
    shifted.data()[i] = original + fd_step;
    const double up = evaluate(shifted);
    shifted.data()[i] = original - fd_step;
    const double down = evaluate(shifted);
    shifted.data()[i] = original;
    const double numeric = (up - down) / (2.0 * fd_step);
    worst = std::max(worst, std::abs(analytic.data()[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace mmfuse
