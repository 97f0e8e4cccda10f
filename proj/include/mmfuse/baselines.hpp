#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/experiments.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct LogRegConfig {
  double c = 1.0;
  double tolerance = 1e-8;  // on the L2 norm of the objective gradient
  std::size_t max_iterations = 2000;
  bool operator==(const LogRegConfig&) const = default;
};

struct LogRegModel {
  std::vector<double> weights;
  double intercept = 0.0;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

// Minimizes 0.5 |w|^2 + C * sum_i logloss(y_i, x_i w + b) with L-BFGS; the
// intercept is not penalized. Non-convergence is reported, not thrown.
LogRegModel fit_logistic_regression(const Tensor2& x, std::span<const int> y, const LogRegConfig& config);
std::vector<double> decision_function(const LogRegModel& model, const Tensor2& x);

struct TabMlpConfig {
  std::array<std::size_t, 2> hidden{128, 64};
  double dropout = 0.3;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 150;
  std::uint64_t seed = 0;
  bool operator==(const TabMlpConfig&) const = default;
};

struct TabMlpModel {
  Tensor2 w1, b1, w2, b2, w3, b3;
};

// Linear -> GELU -> Dropout -> Linear -> GELU -> Dropout -> Linear(2),
// cross-entropy, AdamW at a constant learning rate. Init uses
// derive_seed(seed, 0); shuffles and dropout masks use derive_seed(seed, 1).
TabMlpModel fit_tabmlp(const Tensor2& x, std::span<const int> y, const TabMlpConfig& config);
// logit(1) - logit(0) with dropout off.
std::vector<double> tabmlp_scores(const TabMlpModel& model, const Tensor2& x);

enum class Imputation : unsigned char { train_mean, zero };

struct BaselineConfig {
  LogRegConfig logreg;
  TabMlpConfig tabmlp;
  Imputation raw_imputation = Imputation::train_mean;
  Imputation embedding_imputation = Imputation::zero;
  bool operator==(const BaselineConfig&) const = default;
};

// One modality's columns for every dataset row; rows of absent subjects are
// never read.
struct FeatureBlock {
  Tensor2 values;
  std::vector<bool> present;
};

std::array<FeatureBlock, kModalityCount> embedding_blocks(const Dataset& data);

struct DesignMatrix {
  Tensor2 train;
  Tensor2 test;
  std::vector<std::size_t> imputed_rows;  // dataset rows with at least one filled block
};

// Concatenates blocks for the given rows, fills absent blocks (train means of
// present train rows, or zeros), then z-scores every column with train
// statistics (scale 1 where the train sd is zero).
DesignMatrix assemble_design(std::span<const FeatureBlock> blocks, std::span<const std::size_t> train_rows,
                             std::span<const std::size_t> test_rows, Imputation imputation);

struct BaselineResult {
  std::string model;     // "logreg" or "tabmlp"
  std::string features;  // "raw" or "embeddings"
  std::string task;      // "peak" or "durability"
  std::size_t n_train = 0;
  TaskEvaluation eval;
  bool degenerate = false;  // constant test scores
  bool converged = true;
  std::vector<std::size_t> imputed_rows;
};

// Logistic regression and TabMLP on both tasks. Durability fits and tests use
// labeled subjects only. Bootstrap seeds follow evaluate_test.
std::vector<BaselineResult> run_baselines(std::span<const FeatureBlock> blocks, const std::string& feature_name,
                                          Imputation imputation, const Dataset& data, const SplitAssignment& split,
                                          const BaselineConfig& config, std::size_t resamples,
                                          std::uint64_t bootstrap_seed);

}  // namespace mmfuse
