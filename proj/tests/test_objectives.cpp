#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "mmfuse/objectives.hpp"
#include "support.hpp"

using namespace mmfuse;
using namespace mmfuse::testing;

namespace {

double ce_value(const Tensor2& logits, const std::vector<int>& labels) {
  Graph g;
  return g.value(masked_cross_entropy(g, g.constant(logits), labels))(0, 0);
}

Tensor2 unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Tensor2 h = random_tensor(n, d, rng);
  for (std::size_t r = 0; r < n; ++r) {
    double n2 = 0.0;
    for (double v : h.row(r)) n2 += v * v;
    for (double& v : h.row(r)) v /= std::sqrt(n2);
  }
  return h;
}

std::vector<std::vector<double>> as_rows(const Tensor2& t) {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < t.rows(); ++r) out.emplace_back(t.row(r).begin(), t.row(r).end());
  return out;
}

}  // namespace

TEST_CASE("masked cross-entropy") {
  CHECK(std::abs(ce_value(Tensor2::from_rows({{0, 0}}), {0}) - std::log(2.0)) < 1e-15);
  CHECK(ce_value(Tensor2::from_rows({{3, -1}, {0, 4}}), {-1, -1}) == 0.0);
  CHECK(ce_value(Tensor2::from_rows({{0, 20}}), {1}) < 1e-8);
  // mean over the labeled rows only
  const double a = ce_value(Tensor2::from_rows({{1, 2}}), {0});
  const double b = ce_value(Tensor2::from_rows({{0.5, -1}}), {1});
  CHECK(std::abs(ce_value(Tensor2::from_rows({{1, 2}, {9, 9}, {0.5, -1}}), {0, -1, 1}) - (a + b) / 2) < 1e-15);
}

TEST_CASE("ignored rows receive exactly zero gradient") {
  Graph g;
  const Var logits = g.parameter(Tensor2::from_rows({{1, 2}, {0.3, -0.7}, {2, 2}}));
  const std::vector<int> labels{1, -1, 0};
  g.backward(masked_cross_entropy(g, logits, labels));
  const Tensor2 grad = g.gradient(logits);
  CHECK(grad(1, 0) == 0.0);
  CHECK(grad(1, 1) == 0.0);
  CHECK(grad(0, 0) != 0.0);
}

TEST_CASE("dual-label positive rule") {
  CHECK(dual_label_positive(1, 0, 1, 1));
  CHECK_FALSE(dual_label_positive(1, -1, 0, -1));
  CHECK(dual_label_positive(1, 1, 0, 1));
  CHECK_FALSE(dual_label_positive(1, 1, 0, -1));
  for (int a1 : {0, 1})
    for (int a2 : {-1, 0, 1})
      for (int b1 : {0, 1})
        for (int b2 : {-1, 0, 1}) CHECK(dual_label_positive(a1, a2, b1, b2) == dual_label_positive(b1, b2, a1, a2));
}

TEST_CASE("supcon small cases") {
  const ContrastiveLabels one{{0}, {1}, {1}};
  CHECK(supcon_loss_value(Tensor2::from_rows({{1, 0}}), one, 0.3) == 0.0);

  const ContrastiveLabels pair{{0, 1}, {1, 1}, {-1, -1}};
  CHECK(std::abs(supcon_loss_value(Tensor2::from_rows({{0.6, 0.8}, {0.6, 0.8}}), pair, 0.3)) < 1e-15);

  const ContrastiveLabels all_pos{{0, 1, 2, 2}, {0, 0, 0, 0}, {1, -1, 1, 1}};
  CHECK(std::abs(supcon_loss_value(Tensor2(4, 3, 1.0 / std::sqrt(3.0)), all_pos, 0.3) - std::log(3.0)) < 1e-12);

  const ContrastiveLabels no_pos{{0, 1}, {0, 1}, {-1, -1}};
  CHECK(supcon_loss_value(Tensor2::from_rows({{1, 0}, {0, 1}}), no_pos, 0.3) == 0.0);
}

TEST_CASE("supcon with hand-set vectors matches the direct sum") {
  const double s = std::sqrt(0.5);
  const Tensor2 h = Tensor2::from_rows({{1, 0, 0}, {s, s, 0}, {0, 0, 1}});
  const ContrastiveLabels labels{{0, 1, 2}, {1, 1, 0}, {0, -1, 0}};
  const double expected = direct_supcon(as_rows(h), labels.subject, labels.y1, labels.y2, 0.3);
  CHECK(std::abs(supcon_loss_value(h, labels, 0.3) - expected) < 1e-12);
}

TEST_CASE("supcon on random batches matches the direct sum") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(12);
    const Tensor2 h = unit_rows(n, 5, rng);
    ContrastiveLabels labels;
    for (std::size_t i = 0; i < n; ++i) {
      labels.subject.push_back(rng.below(n / 2 + 1));
    }
    std::vector<int> subj_y1(n), subj_y2(n);
    for (std::size_t i = 0; i < n; ++i) {
      subj_y1[i] = int(rng.below(2));
      subj_y2[i] = int(rng.below(3)) - 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
      labels.y1.push_back(subj_y1[labels.subject[i]]);
      labels.y2.push_back(subj_y2[labels.subject[i]]);
    }
    const double expected = direct_supcon(as_rows(h), labels.subject, labels.y1, labels.y2, 0.3);
    CHECK(std::abs(supcon_loss_value(h, labels, 0.3) - expected) < 1e-10);
    Graph g;
    CHECK(std::abs(g.value(supcon_loss(g, g.constant(h), labels, 0.3))(0, 0) - expected) < 1e-10);
  }
}

TEST_CASE("supcon is invariant to a common rotation") {
  Rng rng(41);
  const std::size_t d = 6;
  const Tensor2 h = unit_rows(8, d, rng);
  Eigen::MatrixXd a(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) a(i, j) = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
  Tensor2 rotated(8, d);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      for (std::size_t k = 0; k < d; ++k) v += h(r, k) * q(k, j);
      rotated(r, j) = v;
    }
  const ContrastiveLabels labels{{0, 0, 1, 2, 3, 3, 4, 5}, {1, 1, 0, 1, 0, 0, 1, 0}, {0, 0, -1, 1, 1, 1, -1, 0}};
  CHECK(std::abs(supcon_loss_value(h, labels, 0.3) - supcon_loss_value(rotated, labels, 0.3)) < 1e-12);
}

TEST_CASE("total loss") {
  const Tensor2 l1 = Tensor2::from_rows({{0.2, 1.0}, {-0.5, 0.3}});
  const Tensor2 l2 = Tensor2::from_rows({{1.5, 0.0}, {0.1, 0.9}});
  const std::vector<int> y1{1, 0};
  {
    Graph g;
    const std::vector<int> y2{-1, -1};
    const LossTerms t = total_loss(g, g.constant(l1), g.constant(l2), y1, y2, g.constant(Tensor2(1, 1, 5.0)), 2.0, 0.0);
    CHECK(g.value(t.total)(0, 0) == doctest::Approx(ce_value(l1, y1)).epsilon(1e-15));
  }
  {
    // equal CE terms c on both tasks: identical logits and labels
    Graph g;
    const double c = ce_value(l1, y1);
    const LossTerms t = total_loss(g, g.constant(l1), g.constant(l1), y1, y1, g.constant(Tensor2(1, 1, 0.7)), 2.0, 0.1);
    CHECK(std::abs(g.value(t.total)(0, 0) - (3 * c + 0.1 * 0.7)) < 1e-15);
  }
  {
    const std::vector<int> y2{0, -1};
    Graph g;
    const Var s = g.constant(Tensor2(1, 1, 1.3));
    const double a = g.value(total_loss(g, g.constant(l1), g.constant(l2), y1, y2, s, 2.0, 0.1).total)(0, 0);
    const double b = g.value(total_loss(g, g.constant(l1), g.constant(l2), y1, y2, s, 2.0, 0.2).total)(0, 0);
    CHECK(std::abs((b - a) - 0.1 * 1.3) < 1e-14);
  }
  {
    Graph g;
    const std::vector<int> y2{1, -1};
    const Var lv = g.parameter(l2);
    g.backward(total_loss(g, g.constant(l1), lv, y1, y2, Var{}, 2.0, 0.0).total);
    CHECK(g.gradient(lv)(1, 0) == 0.0);
    CHECK(g.gradient(lv)(1, 1) == 0.0);
  }
}

TEST_CASE("joint objective uses same-subject and label positives") {
  const ModelConfig cfg = tiny_model_config();
  const Dataset data = tiny_dataset(5, cfg.embed_dim, 3);
  const ModelParams params = initialize_params(cfg, 4);
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
  Graph g;
  const ModelVars vars = bind_params(g, params, false);
  const ForwardResult fr = forward(g, vars, cfg, data, rows, data.presence, {});
  const ContrastiveLabels labels = contrastive_labels(fr, data.y1, data.y2);
  std::size_t expected = 0;
  for (const auto& m : data.presence) expected += m.count();
  CHECK(labels.subject.size() == expected);
  CHECK(fr.instances.size() == expected);
  const LossTerms terms = joint_objective(g, fr, data.y1, data.y2, {});
  const double direct = direct_supcon(as_rows(g.value(fr.projections)), labels.subject, labels.y1, labels.y2, 0.3);
  CHECK(std::abs(g.value(terms.contrastive)(0, 0) - direct) < 1e-12);
  const double total = g.value(terms.ce_peak)(0, 0) + 2.0 * g.value(terms.ce_durability)(0, 0) + 0.1 * direct;
  CHECK(std::abs(g.value(terms.total)(0, 0) - total) < 1e-12);
}
