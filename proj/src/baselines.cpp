#include "mmfuse/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <ceres/ceres.h>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/objectives.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/trainer.hpp"

namespace mmfuse {

namespace {

// log(1 + exp(-t)) without overflow.
double softplus_neg(double t) { return std::log1p(std::exp(-std::abs(t))) + std::max(-t, 0.0); }

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

class LogisticObjective final : public ceres::FirstOrderFunction {
 public:
  LogisticObjective(const Tensor2& x, std::span<const int> y, double c) : x_(x), y_(y), c_(c) {}

  bool Evaluate(const double* params, double* cost, double* gradient) const override {
    const std::size_t d = x_.cols();
    const double b = params[d];
    double total = 0.0;
    for (std::size_t k = 0; k < d; ++k) total += 0.5 * params[k] * params[k];
    if (gradient != nullptr) {
      for (std::size_t k = 0; k < d; ++k) gradient[k] = params[k];
      gradient[d] = 0.0;
    }
    for (std::size_t i = 0; i < x_.rows(); ++i) {
      const auto row = x_.row(i);
      double z = b;
      for (std::size_t k = 0; k < d; ++k) z += row[k] * params[k];
      const double sign = y_[i] == 1 ? 1.0 : -1.0;
      total += c_ * softplus_neg(sign * z);
      if (gradient != nullptr) {
        // d/dz log(1 + exp(-s z)) = -s * sigmoid(-s z)
        const double dz = -sign * sigmoid(-sign * z) * c_;
        for (std::size_t k = 0; k < d; ++k) gradient[k] += dz * row[k];
        gradient[d] += dz;
      }
    }
    *cost = total;
    return std::isfinite(total);
  }

  int NumParameters() const override { return int(x_.cols() + 1); }

 private:
  const Tensor2& x_;
  std::span<const int> y_;
  double c_;
};

Tensor2 uniform_init(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor2 t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

struct MlpVars {
  Var w1, b1, w2, b2, w3, b3;
};

Var dropout_layer(Graph& g, Var x, double p, Rng* rng) {
  if (rng == nullptr || p == 0.0) return x;
  const Tensor2& v = g.value(x);
  Tensor2 mask(v.rows(), v.cols());
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask.values()) m = rng->bernoulli(p) ? 0.0 : keep;
  return multiply_constant(g, x, std::move(mask));
}

Var mlp_forward(Graph& g, const MlpVars& v, Var x, double p, Rng* rng) {
  Var h = dropout_layer(g, gelu(g, linear(g, x, v.w1, v.b1)), p, rng);
  h = dropout_layer(g, gelu(g, linear(g, h, v.w2, v.b2)), p, rng);
  return linear(g, h, v.w3, v.b3);
}

MlpVars bind(Graph& g, const TabMlpModel& m, bool trainable) {
  auto leaf = [&](const Tensor2& t) { return trainable ? g.parameter(t) : g.constant(t); };
  return {leaf(m.w1), leaf(m.b1), leaf(m.w2), leaf(m.b2), leaf(m.w3), leaf(m.b3)};
}

std::vector<int> take(std::span<const int> labels, std::span<const std::size_t> rows) {
  std::vector<int> out;
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

}  // namespace

LogRegModel fit_logistic_regression(const Tensor2& x, std::span<const int> y, const LogRegConfig& config) {
  if (x.rows() != y.size() || x.rows() == 0) throw ConfigError("logreg: feature rows and labels differ");
  if (!(config.c > 0.0)) throw ConfigError("logreg: C must be positive");
  const std::size_t d = x.cols();
  std::vector<double> params(d + 1, 0.0);

  ceres::GradientProblem problem(new LogisticObjective(x, y, config.c));
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = int(config.max_iterations);
  options.gradient_tolerance = config.tolerance / std::sqrt(double(d + 1));
  options.function_tolerance = 0.0;
  options.parameter_tolerance = 0.0;
  options.logging_type = ceres::SILENT;
  options.minimizer_progress_to_stdout = false;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, params.data(), &summary);

  LogRegModel model;
  model.weights.assign(params.begin(), params.begin() + std::ptrdiff_t(d));
  model.intercept = params[d];
  model.iterations = summary.iterations.empty() ? 0 : summary.iterations.size() - 1;
  std::vector<double> gradient(d + 1);
  double cost = 0.0;
  LogisticObjective(x, y, config.c).Evaluate(params.data(), &cost, gradient.data());
  model.gradient_norm = std::sqrt(std::inner_product(gradient.begin(), gradient.end(), gradient.begin(), 0.0));
  model.converged = model.gradient_norm <= config.tolerance;
  return model;
}

std::vector<double> decision_function(const LogRegModel& model, const Tensor2& x) {
  if (x.cols() != model.weights.size()) throw ConfigError("logreg: feature width mismatch");
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    out[i] = std::inner_product(row.begin(), row.end(), model.weights.begin(), model.intercept);
  }
  return out;
}

TabMlpModel fit_tabmlp(const Tensor2& x, std::span<const int> y, const TabMlpConfig& config) {
  if (x.rows() != y.size() || x.rows() == 0) throw ConfigError("tabmlp: feature rows and labels differ");
  if (config.batch_size == 0 || config.epochs == 0) throw ConfigError("tabmlp: batch_size and epochs must be positive");
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw ConfigError("tabmlp: dropout must lie in [0, 1)");
  Rng init(derive_seed(config.seed, 0));
  const std::size_t d = x.cols();
  const auto [h1, h2] = config.hidden;
  TabMlpModel m;
  const double s1 = 1.0 / std::sqrt(double(d));
  const double s2 = 1.0 / std::sqrt(double(h1));
  const double s3 = 1.0 / std::sqrt(double(h2));
  m.w1 = uniform_init(d, h1, s1, init);
  m.b1 = uniform_init(1, h1, s1, init);
  m.w2 = uniform_init(h1, h2, s2, init);
  m.b2 = uniform_init(1, h2, s2, init);
  m.w3 = uniform_init(h2, 2, s3, init);
  m.b3 = uniform_init(1, 2, s3, init);

  Rng rng(derive_seed(config.seed, 1));
  AdamW optimizer;
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start,
                                               std::min(order.size(), start + config.batch_size) - start);
      Graph g;
      const MlpVars v = bind(g, m, true);
      const Var logits = mlp_forward(g, v, g.constant(gather_rows(x, batch)), config.dropout, &rng);
      const Var loss = masked_cross_entropy(g, logits, take(y, batch));
      g.backward(loss);
      std::vector<Tensor2> grads{g.gradient(v.w1), g.gradient(v.b1), g.gradient(v.w2),
                                 g.gradient(v.b2), g.gradient(v.w3), g.gradient(v.b3)};
      std::vector<Tensor2*> params{&m.w1, &m.b1, &m.w2, &m.b2, &m.w3, &m.b3};
      std::vector<const Tensor2*> grad_ptrs;
      for (const auto& t : grads) grad_ptrs.push_back(&t);
      optimizer.step(params, grad_ptrs, config.lr, config.weight_decay);
    }
  }
  return m;
}

std::vector<double> tabmlp_scores(const TabMlpModel& model, const Tensor2& x) {
  Graph g;
  const MlpVars v = bind(g, model, false);
  const Tensor2& logits = g.value(mlp_forward(g, v, g.constant(x), 0.0, nullptr));
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = logits(i, 1) - logits(i, 0);
  return out;
}

std::array<FeatureBlock, kModalityCount> embedding_blocks(const Dataset& data) {
  std::array<FeatureBlock, kModalityCount> blocks;
  for (Modality m : kAllModalities) {
    auto& b = blocks[index(m)];
    b.values = data.embeddings[index(m)];
    b.present.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) b.present[i] = data.presence[i].test(index(m));
  }
  return blocks;
}

DesignMatrix assemble_design(std::span<const FeatureBlock> blocks, std::span<const std::size_t> train_rows,
                             std::span<const std::size_t> test_rows, Imputation imputation) {
  if (train_rows.empty()) throw DataError("baselines: empty training rows");
  std::size_t width = 0;
  for (const auto& b : blocks) width += b.values.cols();
  DesignMatrix out{Tensor2(train_rows.size(), width), Tensor2(test_rows.size(), width), {}};
  std::vector<bool> imputed;
  for (const auto& b : blocks) imputed.resize(std::max(imputed.size(), b.present.size()), false);

  std::size_t offset = 0;
  for (const auto& b : blocks) {
    const std::size_t d = b.values.cols();
    std::vector<double> fill(d, 0.0);
    if (imputation == Imputation::train_mean) {
      std::size_t count = 0;
      for (std::size_t r : train_rows) {
        if (!b.present[r]) continue;
        ++count;
        for (std::size_t k = 0; k < d; ++k) fill[k] += b.values(r, k);
      }
      if (count > 0)
        for (double& f : fill) f /= double(count);
    }
    auto place = [&](Tensor2& dst, std::span<const std::size_t> rows) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        if (!b.present[r]) imputed[r] = true;
        for (std::size_t k = 0; k < d; ++k) dst(i, offset + k) = b.present[r] ? b.values(r, k) : fill[k];
      }
    };
    place(out.train, train_rows);
    place(out.test, test_rows);
    offset += d;
  }

  const double n = double(train_rows.size());
  for (std::size_t k = 0; k < width; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < out.train.rows(); ++i) mean += out.train(i, k);
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < out.train.rows(); ++i) var += (out.train(i, k) - mean) * (out.train(i, k) - mean);
    double sd = std::sqrt(var / n);
    if (!(sd > 0.0)) sd = 1.0;
    for (std::size_t i = 0; i < out.train.rows(); ++i) out.train(i, k) = (out.train(i, k) - mean) / sd;
    for (std::size_t i = 0; i < out.test.rows(); ++i) out.test(i, k) = (out.test(i, k) - mean) / sd;
  }
  for (std::size_t r = 0; r < imputed.size(); ++r)
    if (imputed[r]) out.imputed_rows.push_back(r);
  return out;
}

std::vector<BaselineResult> run_baselines(std::span<const FeatureBlock> blocks, const std::string& feature_name,
                                          Imputation imputation, const Dataset& data, const SplitAssignment& split,
                                          const BaselineConfig& config, std::size_t resamples,
                                          std::uint64_t bootstrap_seed) {
  for (const auto& b : blocks) {
    if (b.values.rows() != data.size() || b.present.size() != data.size()) {
      throw DataError("baselines: feature block rows do not match the cohort");
    }
  }
  std::vector<BaselineResult> results;
  for (const char* task : {"peak", "durability"}) {
    const bool durability = std::string(task) == "durability";
    const auto& labels = durability ? data.y2 : data.y1;
    const auto train_rows = durability ? split.labeled_rows(Fold::train, data.y2) : split.rows(Fold::train);
    const auto test_rows = durability ? split.labeled_rows(Fold::test, data.y2) : split.rows(Fold::test);
    const DesignMatrix design = assemble_design(blocks, train_rows, test_rows, imputation);
    const auto y_train = take(labels, train_rows);
    const auto y_test = take(labels, test_rows);
    const std::uint64_t seed = derive_seed(bootstrap_seed, durability ? 1 : 0);

    auto finish = [&](const char* model_name, std::vector<double> scores, bool converged) {
      BaselineResult r;
      r.model = model_name;
      r.features = feature_name;
      r.task = task;
      r.n_train = train_rows.size();
      r.converged = converged;
      r.imputed_rows = design.imputed_rows;
      r.degenerate = std::adjacent_find(scores.begin(), scores.end(), std::not_equal_to<>()) == scores.end();
      auto value = try_auroc(scores, y_test);
      if (!value) throw UndefinedAurocError(std::string("baseline test ") + task + " AUROC undefined: single class");
      r.eval.n = y_test.size();
      r.eval.n_positive = std::size_t(std::count(y_test.begin(), y_test.end(), 1));
      r.eval.auroc = *value;
      r.eval.ci = bootstrap_ci(scores, y_test, resamples, seed);
      results.push_back(std::move(r));
    };

    const LogRegModel lr = fit_logistic_regression(design.train, y_train, config.logreg);
    finish("logreg", decision_function(lr, design.test), lr.converged);
    const TabMlpModel mlp = fit_tabmlp(design.train, y_train, config.tabmlp);
    finish("tabmlp", tabmlp_scores(mlp, design.test), true);
  }
  return results;
}

}  // namespace mmfuse
