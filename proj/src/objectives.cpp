#include "mmfuse/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

struct SupconPlan {
  double loss = 0.0;
  Tensor2 coefficients;  // d loss / d similarity(a, k), before the 1/temperature factor
};

SupconPlan plan_supcon(const Tensor2& h, const ContrastiveLabels& labels, double temperature) {
  const std::size_t k = h.rows();
  if (labels.subject.size() != k || labels.y1.size() != k || labels.y2.size() != k) {
    throw ConfigError("supcon_loss: label vectors must have one entry per instance");
  }
  if (!(temperature > 0.0)) throw ConfigError("supcon_loss: temperature must be positive");
  SupconPlan plan;
  plan.coefficients = Tensor2(k, k);
  if (k < 2) return plan;

  Tensor2 sim(k, k);
  sim.matrix().noalias() = h.matrix() * h.matrix().transpose();
  sim.matrix() /= temperature;

  std::vector<std::uint8_t> positive(k);
  std::vector<double> q(k);
  std::size_t anchors = 0;
  double total = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    std::size_t n_pos = 0;
    for (std::size_t j = 0; j < k; ++j) {
      positive[j] = j != a && (labels.subject[j] == labels.subject[a] ||
                               dual_label_positive(labels.y1[a], labels.y2[a], labels.y1[j], labels.y2[j]));
      n_pos += positive[j];
    }
    if (n_pos == 0) continue;
    ++anchors;
    double max_s = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j)
      if (j != a) max_s = std::max(max_s, sim(a, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      q[j] = j == a ? 0.0 : std::exp(sim(a, j) - max_s);
      denom += q[j];
    }
    const double log_denom = max_s + std::log(denom);
    double anchor_loss = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (positive[j]) anchor_loss -= sim(a, j) - log_denom;
      plan.coefficients(a, j) = q[j] / denom - (positive[j] ? 1.0 / double(n_pos) : 0.0);
    }
    total += anchor_loss / double(n_pos);
  }
  if (anchors == 0) return plan;
  plan.loss = total / double(anchors);
  plan.coefficients.matrix() /= double(anchors);
  // rows of anchors without positives were never written and stay zero
  return plan;
}

}  // namespace

Var masked_cross_entropy(Graph& g, Var logits, std::span<const int> labels) {
  const Tensor2& lv = g.value(logits);
  if (lv.rows() != labels.size()) throw ConfigError("masked_cross_entropy: one label per row is required");
  const std::size_t classes = lv.cols();
  Tensor2 probs(lv.rows(), classes);
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (labels[r] == kMissingLabel) continue;
    if (labels[r] < 0 || std::size_t(labels[r]) >= classes) throw ConfigError("masked_cross_entropy: label out of range");
    const auto row = lv.row(r);
    const double max_l = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - max_l);
    const double log_z = max_l + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs(r, c) = std::exp(row[c] - log_z);
    total += log_z - row[std::size_t(labels[r])];
    ++counted;
  }
  const double loss = counted == 0 ? 0.0 : total / double(counted);
  std::vector<int> kept(labels.begin(), labels.end());
  return g.record(Tensor2(1, 1, loss), {logits}, OpTag::cross_entropy,
                  [logits, kept = std::move(kept), probs = std::move(probs), counted](Graph& gr, std::size_t self) {
                    if (counted == 0) return;
                    Tensor2* dl = gr.grad_sink(logits);
                    const double scale = gr.upstream(self)(0, 0) / double(counted);
                    for (std::size_t r = 0; r < kept.size(); ++r) {
                      if (kept[r] == kMissingLabel) continue;
                      for (std::size_t c = 0; c < probs.cols(); ++c) {
                        (*dl)(r, c) += scale * (probs(r, c) - (std::size_t(kept[r]) == c ? 1.0 : 0.0));
                      }
                    }
                  });
}

ContrastiveLabels contrastive_labels(const ForwardResult& forward, std::span<const int> y1, std::span<const int> y2) {
  ContrastiveLabels out;
  for (const auto& inst : forward.instances) {
    out.subject.push_back(inst.batch_row);
    out.y1.push_back(y1[inst.batch_row]);
    out.y2.push_back(y2[inst.batch_row]);
  }
  return out;
}

double supcon_loss_value(const Tensor2& projections, const ContrastiveLabels& labels, double temperature) {
  return plan_supcon(projections, labels, temperature).loss;
}

Var supcon_loss(Graph& g, Var projections, const ContrastiveLabels& labels, double temperature) {
  SupconPlan plan = plan_supcon(g.value(projections), labels, temperature);
  return g.record(Tensor2(1, 1, plan.loss), {projections}, OpTag::supcon,
                  [projections, coeff = std::move(plan.coefficients), temperature](Graph& gr, std::size_t self) {
                    Tensor2* dh = gr.grad_sink(projections);
                    const double scale = gr.upstream(self)(0, 0) / temperature;
                    const auto h = gr.value(projections).matrix();
                    const auto c = coeff.matrix();
                    dh->matrix().noalias() += scale * (c + c.transpose()) * h;
                  });
}

LossTerms total_loss(Graph& g, Var logits_peak, Var logits_durability, std::span<const int> y1,
                     std::span<const int> y2, Var supcon, double w_t2, double lambda) {
  LossTerms terms;
  terms.ce_peak = masked_cross_entropy(g, logits_peak, y1);
  terms.ce_durability = masked_cross_entropy(g, logits_durability, y2);
  terms.total = add(g, terms.ce_peak, scale(g, terms.ce_durability, w_t2));
  if (supcon.valid() && lambda != 0.0) {
    terms.contrastive = supcon;
    terms.total = add(g, terms.total, scale(g, supcon, lambda));
  }
  return terms;
}

LossTerms joint_objective(Graph& g, const ForwardResult& forward, std::span<const int> y1, std::span<const int> y2,
                          const ObjectiveWeights& weights) {
  Var supcon;
  if (weights.lambda != 0.0 && forward.projections.valid()) {
    supcon = supcon_loss(g, forward.projections, contrastive_labels(forward, y1, y2), weights.temperature);
  }
  return total_loss(g, forward.logits_peak, forward.logits_durability, y1, y2, supcon, weights.w_t2, weights.lambda);
}

}  // namespace mmfuse
