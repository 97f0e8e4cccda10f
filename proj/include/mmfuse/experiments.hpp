#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/trainer.hpp"

namespace mmfuse {

struct EvalConfig {
  std::size_t bootstrap_resamples = 1000;
  std::uint64_t bootstrap_seed = 0;
  std::size_t permutations = 1000;
  std::uint64_t permutation_seed = 0;
  std::vector<double> degradation_rhos{0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0};
  std::uint64_t mask_seed = 13;
  std::size_t workers = 1;

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

// Scores and labels of one task on a set of rows. Durability keeps only rows
// with a present label.
struct TaskSample {
  std::vector<std::size_t> rows;
  std::vector<double> scores;
  std::vector<int> labels;
};
TaskSample peak_sample(const Predictions& pred, const Dataset& data, std::span<const std::size_t> rows);
TaskSample durability_sample(const Predictions& pred, const Dataset& data, std::span<const std::size_t> rows);

struct TaskEvaluation {
  std::size_t n = 0;
  std::size_t n_positive = 0;
  double auroc = 0.0;
  BootstrapCi ci;
};

struct TestEvaluation {
  TaskEvaluation peak;
  TaskEvaluation durability;
  Predictions predictions;  // over the test rows
  std::vector<std::size_t> rows;
};

// Test-fold AUROC and bootstrap CI per task (t2 over labeled test rows). The
// durability interval uses derive_seed(bootstrap_seed, 1), peak uses
// derive_seed(bootstrap_seed, 0). Throws UndefinedAurocError naming the task
// when a test fold is single-class.
TestEvaluation evaluate_test(const ModelParams& params, const ModelConfig& model_config, const Dataset& data,
                             const SplitAssignment& split, std::size_t resamples, std::uint64_t bootstrap_seed);

struct TaskAurocs {
  double peak = 0.0;
  double durability = 0.0;
};

// Test AUROCs of a freshly trained model; both tasks must be defined.
TaskAurocs test_aurocs(const ModelParams& params, const ModelConfig& model_config, const Dataset& data,
                       const SplitAssignment& split);

// Permuted copy of the labels: y1 shuffled over all subjects, y2 shuffled
// among subjects with a present label (the missingness pattern is kept).
Dataset permute_labels(const Dataset& data, Rng& rng);

double permutation_p_value(double observed, std::span<const double> null_values);

struct PermutationRun {
  std::size_t index = 0;
  std::size_t attempts = 1;
  std::uint64_t seed = 0;  // seed of the successful attempt
  double peak = 0.0;
  double durability = 0.0;
};

struct PermutationReport {
  TaskAurocs observed;
  std::vector<PermutationRun> runs;
  double p_peak = 1.0;
  double p_durability = 1.0;
  double null_mean_peak = 0.0;
  double null_sd_peak = 0.0;
  double null_mean_durability = 0.0;
  double null_sd_durability = 0.0;
};

// Retrains on permuted labels n times with the same split and
// hyperparameters. Attempt a of run i uses seed derive_seed(derive_seed(base, i), a)
// both for the label shuffle and (via derive_seed(., 1)) for training. A
// failed attempt is retried once; a second failure aborts the test.
PermutationReport permutation_test(const Dataset& data, const SplitAssignment& split, const ModelConfig& model_config,
                                   const TrainConfig& train_config, const TaskAurocs& observed, std::size_t n,
                                   std::uint64_t base_seed, std::size_t workers);

// Test rows with all four modalities present.
std::vector<std::size_t> complete_case_rows(const Dataset& data, const SplitAssignment& split);

struct ModalityContribution {
  Modality modality = Modality::antibody;
  double loo_peak = 0.0;
  double delta_peak = 0.0;  // reference - loo
  double koo_peak = 0.0;
  std::optional<double> loo_durability;
  std::optional<double> delta_durability;
  std::optional<double> koo_durability;
};

struct ContributionReport {
  std::vector<std::size_t> rows;
  double reference_peak = 0.0;
  std::optional<double> reference_durability;  // empty when labeled complete cases are single-class
  std::array<ModalityContribution, kModalityCount> modalities;
};

// Leave-one-out and keep-one-out masking on complete-case test subjects.
// Inference only; parameters are untouched.
ContributionReport contribution_analysis(const ModelParams& params, const ModelConfig& model_config,
                                         const Dataset& data, const SplitAssignment& split);

struct DegradationPoint {
  Modality modality = Modality::antibody;
  double rho = 0.0;
  std::size_t masked = 0;
  double peak = 0.0;
  double durability = 0.0;
};

struct DegradationReport {
  double reference_peak = 0.0;
  double reference_durability = 0.0;
  double meta_only_peak = 0.0;
  double meta_only_durability = 0.0;
  std::vector<DegradationPoint> points;  // modality-major, rho in input order
};

// For modality m (index k) and rho_j, the masked subset is drawn with
// Rng(derive_seed(mask_seed, k * rhos.size() + j)): the test positions
// 0..n-1 are shuffled with Rng::shuffle and the first floor(rho * n) are
// masked. The meta-only point masks every modality of every test subject.
DegradationReport degradation_sweep(const ModelParams& params, const ModelConfig& model_config, const Dataset& data,
                                    const SplitAssignment& split, std::span<const double> rhos,
                                    std::uint64_t mask_seed);

struct AblationCell {
  std::string name;
  double lambda = 0.0;
  double modality_dropout_p = 0.0;
  double w_t2 = 0.0;
  TaskEvaluation peak;
  TaskEvaluation durability;
  TrainHistory history;
};

// Grid of five configurations derived from `base`: full, lambda = 0, p = 0,
// both off, w_t2 = 1. Same seed and split for every cell.
std::vector<TrainConfig> ablation_grid(const TrainConfig& base, std::vector<std::string>* names = nullptr);
std::vector<AblationCell> ablation_runner(const Dataset& data, const SplitAssignment& split,
                                          const ModelConfig& model_config, const TrainConfig& base,
                                          std::size_t resamples, std::uint64_t bootstrap_seed, std::size_t workers);

}  // namespace mmfuse
