#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse {

// Mean of -log softmax(logits)[label] over rows whose label is not -1. Rows
// with label -1 get zero loss and zero gradient; no labeled rows gives 0.
Var masked_cross_entropy(Graph& g, Var logits, std::span<const int> labels);

// Subjects are a positive pair when they share y1, or share a present y2.
constexpr bool dual_label_positive(int y1_i, int y2_i, int y1_j, int y2_j) noexcept {
  return y1_i == y1_j || (y2_i != -1 && y2_j != -1 && y2_i == y2_j);
}

// Labels of each contrastive instance (one row of the projection matrix).
struct ContrastiveLabels {
  std::vector<std::size_t> subject;
  std::vector<int> y1;
  std::vector<int> y2;
};

ContrastiveLabels contrastive_labels(const ForwardResult& forward, std::span<const int> y1, std::span<const int> y2);

// Supervised contrastive loss over unit rows of `projections`. For anchor a,
// positives are other instances of the same subject plus instances of subjects
// passing dual_label_positive; the denominator runs over every instance but a.
// Averaged over anchors with at least one positive (0 when there are none).
Var supcon_loss(Graph& g, Var projections, const ContrastiveLabels& labels, double temperature);
double supcon_loss_value(const Tensor2& projections, const ContrastiveLabels& labels, double temperature);

struct LossTerms {
  Var total;
  Var ce_peak;
  Var ce_durability;
  Var contrastive;  // invalid when lambda == 0 or there are no instances
};

// total = CE_peak + w_t2 * CE_durability(masked) + lambda * supcon
LossTerms total_loss(Graph& g, Var logits_peak, Var logits_durability, std::span<const int> y1,
                     std::span<const int> y2, Var supcon, double w_t2, double lambda);

struct ObjectiveWeights {
  double w_t2 = 2.0;
  double lambda = 0.1;
  double temperature = 0.3;
};

// Assembles the joint objective for a forward pass over a batch with labels
// y1/y2 (one per batch row).
LossTerms joint_objective(Graph& g, const ForwardResult& forward, std::span<const int> y1, std::span<const int> y2,
                          const ObjectiveWeights& weights);

}  // namespace mmfuse
