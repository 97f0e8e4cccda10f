#include <cmath>

#include "doctest.h"
#include "mmfuse/baselines.hpp"
#include "mmfuse/features.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/synthetic.hpp"
#include "support.hpp"

using namespace mmfuse;
using namespace mmfuse::testing;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Root of w - 2C(1 - sigmoid(w)) on [0, 2C].
double stationary_weight(double c) {
  double lo = 0.0, hi = 2.0 * c;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mid - 2.0 * c * (1.0 - sigmoid(mid)) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("logistic regression on a separable toy") {
  Rng rng(1);
  Tensor2 x(40, 2);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    y[i] = int(i % 2);
    x(i, 0) = rng.uniform(0.5, 2.0) * (y[i] ? 1 : -1);
    x(i, 1) = rng.normal();
  }
  const LogRegModel m = fit_logistic_regression(x, y, {});
  CHECK(m.converged);
  CHECK(auroc(decision_function(m, x), y) == 1.0);
}

TEST_CASE("logistic regression matches the stationarity condition") {
  const Tensor2 x = Tensor2::from_rows({{1.0}, {-1.0}});
  const std::vector<int> y{1, 0};
  for (double c : {0.1, 1.0, 5.0}) {
    LogRegConfig cfg;
    cfg.c = c;
    const LogRegModel m = fit_logistic_regression(x, y, cfg);
    CHECK(m.converged);
    CHECK(m.gradient_norm <= cfg.tolerance);
    CHECK(std::abs(m.weights[0] - stationary_weight(c)) < 1e-7);
    CHECK(std::abs(m.intercept) < 1e-7);
  }
}

TEST_CASE("logistic regression reports non-convergence") {
  Rng rng(2);
  const Tensor2 x = random_tensor(30, 5, rng);
  std::vector<int> y(30);
  for (std::size_t i = 0; i < 30; ++i) y[i] = int(i % 2);
  LogRegConfig cfg;
  cfg.max_iterations = 1;
  const LogRegModel m = fit_logistic_regression(x, y, cfg);
  CHECK_FALSE(m.converged);
}

TEST_CASE("TabMLP is deterministic and learns a simple rule") {
  Rng rng(3);
  const Tensor2 x = random_tensor(64, 4, rng);
  std::vector<int> y(64);
  for (std::size_t i = 0; i < 64; ++i) y[i] = x(i, 0) + x(i, 1) > 0.0;
  TabMlpConfig cfg;
  cfg.epochs = 40;
  cfg.hidden = {16, 8};
  cfg.lr = 1e-2;
  const TabMlpModel a = fit_tabmlp(x, y, cfg);
  const TabMlpModel b = fit_tabmlp(x, y, cfg);
  CHECK(a.w1 == b.w1);
  CHECK(a.w3 == b.w3);
  CHECK(tabmlp_scores(a, x) == tabmlp_scores(b, x));
  CHECK(auroc(tabmlp_scores(a, x), y) > 0.9);
  cfg.seed = 1;
  CHECK_FALSE(fit_tabmlp(x, y, cfg).w1 == a.w1);
}

TEST_CASE("design assembly imputes absent blocks and z-scores with train statistics") {
  FeatureBlock a{Tensor2::from_rows({{1}, {3}, {100}, {7}}), {true, true, true, true}};
  FeatureBlock b{Tensor2::from_rows({{2}, {-999}, {6}, {-999}}), {true, false, true, false}};
  const std::vector<FeatureBlock> blocks{a, b};
  const std::vector<std::size_t> train{0, 1, 2}, test{3};

  const DesignMatrix mean = assemble_design(blocks, train, test, Imputation::train_mean);
  CHECK(mean.imputed_rows == std::vector<std::size_t>{1, 3});
  // column b train values after mean fill: 2, 4, 6 -> mean 4
  CHECK(std::abs(mean.train(1, 1)) < 1e-15);
  CHECK(std::abs(mean.test(0, 1)) < 1e-15);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < 3; ++r) m += mean.train(r, c) / 3.0;
    CHECK(std::abs(m) < 1e-12);
  }

  const DesignMatrix zero = assemble_design(blocks, train, test, Imputation::zero);
  // column b train values after zero fill: 2, 0, 6 -> mean 8/3
  CHECK(zero.train(1, 1) < 0.0);
  CHECK(zero.test(0, 1) == doctest::Approx(zero.train(1, 1)));
}

TEST_CASE("baseline runner covers both models and tasks") {
  SyntheticSpec spec;
  spec.embed_dim = 8;
  spec.seed = 4;
  const SyntheticCohort cohort = generate_synthetic_cohort(spec);
  const SplitAssignment split = stratified_split(cohort.data.y1, {}, 1);
  BaselineConfig cfg;
  cfg.tabmlp.epochs = 5;
  const auto blocks = embedding_blocks(cohort.data);
  const auto results = run_baselines(blocks, "embeddings", Imputation::zero, cohort.data, split, cfg, 50, 0);
  REQUIRE(results.size() == 4);
  const std::size_t labeled_train = split.labeled_rows(Fold::train, cohort.data.y2).size();
  for (const auto& r : results) {
    CHECK(r.features == "embeddings");
    if (r.task == "peak") CHECK(r.n_train == 94);
    if (r.task == "durability") CHECK(r.n_train == labeled_train);
    CHECK(r.eval.auroc >= 0.0);
    CHECK(r.eval.auroc <= 1.0);
  }
}
