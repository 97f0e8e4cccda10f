#include "mmfuse/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mmfuse/error.hpp"
#include "mmfuse/parallel.hpp"

namespace mmfuse {

void EvalConfig::validate() const {
  if (bootstrap_resamples == 0) throw ConfigError("eval config: bootstrap_resamples must be positive");
  if (permutations == 0) throw ConfigError("eval config: permutations must be positive");
  if (workers == 0) throw ConfigError("eval config: workers must be positive");
  if (degradation_rhos.empty()) throw ConfigError("eval config: degradation_rhos is empty");
  for (double rho : degradation_rhos) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("eval config: degradation rho outside [0, 1]");
  }
}

TaskSample peak_sample(const Predictions& pred, const Dataset& data, std::span<const std::size_t> rows) {
  TaskSample s;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s.rows.push_back(rows[i]);
    s.scores.push_back(pred.peak[i]);
    s.labels.push_back(data.y1[rows[i]]);
  }
  return s;
}

TaskSample durability_sample(const Predictions& pred, const Dataset& data, std::span<const std::size_t> rows) {
  TaskSample s;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (data.y2[rows[i]] == kMissingLabel) continue;
    s.rows.push_back(rows[i]);
    s.scores.push_back(pred.durability[i]);
    s.labels.push_back(data.y2[rows[i]]);
  }
  return s;
}

namespace {

double task_auroc(const TaskSample& s, const char* what) {
  auto value = try_auroc(s.scores, s.labels);
  if (!value) {
    throw UndefinedAurocError(std::string(what) + " AUROC undefined: " + std::to_string(s.labels.size()) +
                              " subjects, single class");
  }
  return *value;
}

TaskEvaluation evaluate_task(const TaskSample& s, const char* what, std::size_t resamples, std::uint64_t seed) {
  TaskEvaluation e;
  e.n = s.labels.size();
  e.n_positive = std::size_t(std::count(s.labels.begin(), s.labels.end(), 1));
  e.auroc = task_auroc(s, what);
  e.ci = bootstrap_ci(s.scores, s.labels, resamples, seed);
  return e;
}

std::vector<ModalityMask> observed_masks(const Dataset& data, std::span<const std::size_t> rows) {
  std::vector<ModalityMask> masks;
  masks.reserve(rows.size());
  for (std::size_t r : rows) masks.push_back(data.presence[r]);
  return masks;
}

std::pair<double, double> mean_sd(std::span<const double> values) {
  const double n = double(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return {mean, sd};
}

}  // namespace

TestEvaluation evaluate_test(const ModelParams& params, const ModelConfig& model_config, const Dataset& data,
                             const SplitAssignment& split, std::size_t resamples, std::uint64_t bootstrap_seed) {
  TestEvaluation out;
  out.rows = split.rows(Fold::test);
  if (out.rows.empty()) throw DataError("evaluate: empty test fold");
  out.predictions = predict(params, model_config, data, out.rows);
  out.peak = evaluate_task(peak_sample(out.predictions, data, out.rows), "test peak-response", resamples,
                           derive_seed(bootstrap_seed, 0));
  out.durability = evaluate_task(durability_sample(out.predictions, data, out.rows), "test durability", resamples,
                                 derive_seed(bootstrap_seed, 1));
  return out;
}

TaskAurocs test_aurocs(const ModelParams& params, const ModelConfig& model_config, const Dataset& data,
                       const SplitAssignment& split) {
  const auto rows = split.rows(Fold::test);
  const Predictions pred = predict(params, model_config, data, rows);
  return {task_auroc(peak_sample(pred, data, rows), "test peak-response"),
          task_auroc(durability_sample(pred, data, rows), "test durability")};
}

Dataset permute_labels(const Dataset& data, Rng& rng) {
  Dataset out = data;
  rng.shuffle(std::span<int>(out.y1));
  std::vector<std::size_t> labeled;
  std::vector<int> values;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.y2[i] == kMissingLabel) continue;
    labeled.push_back(i);
    values.push_back(data.y2[i]);
  }
  rng.shuffle(std::span<int>(values));
  for (std::size_t k = 0; k < labeled.size(); ++k) out.y2[labeled[k]] = values[k];
  return out;
}

double permutation_p_value(double observed, std::span<const double> null_values) {
  const auto hits = std::count_if(null_values.begin(), null_values.end(), [&](double v) { return v >= observed; });
  return (1.0 + double(hits)) / (double(null_values.size()) + 1.0);
}

PermutationReport permutation_test(const Dataset& data, const SplitAssignment& split, const ModelConfig& model_config,
                                   const TrainConfig& train_config, const TaskAurocs& observed, std::size_t n,
                                   std::uint64_t base_seed, std::size_t workers) {
  if (n == 0) throw ConfigError("permutation_test: need at least one permutation");
  const std::function<PermutationRun(std::size_t)> run_one = [&](std::size_t i) {
    const std::uint64_t run_seed = derive_seed(base_seed, i);
    std::string first_failure;
    for (std::size_t attempt = 0; attempt < 2; ++attempt) {
      const std::uint64_t seed = derive_seed(run_seed, attempt);
      try {
        Rng rng(derive_seed(seed, 0));
        const Dataset permuted = permute_labels(data, rng);
        TrainConfig cfg = train_config;
        cfg.seed = derive_seed(seed, 1);
        const TrainResult trained = train(permuted, split, model_config, cfg);
        const TaskAurocs null_value = test_aurocs(trained.params, model_config, permuted, split);
        return PermutationRun{i, attempt + 1, seed, null_value.peak, null_value.durability};
      } catch (const std::exception& e) {
        if (attempt == 1) {
          throw NumericError("permutation " + std::to_string(i) + " failed twice: " + first_failure + " / " +
                             e.what());
        }
        first_failure = e.what();
      }
    }
    throw NumericError("unreachable");
  };

  PermutationReport report;
  report.observed = observed;
  report.runs = parallel_map<PermutationRun>(n, workers, run_one);
  std::vector<double> peak;
  std::vector<double> durability;
  for (const auto& r : report.runs) {
    peak.push_back(r.peak);
    durability.push_back(r.durability);
  }
  report.p_peak = permutation_p_value(observed.peak, peak);
  report.p_durability = permutation_p_value(observed.durability, durability);
  std::tie(report.null_mean_peak, report.null_sd_peak) = mean_sd(peak);
  std::tie(report.null_mean_durability, report.null_sd_durability) = mean_sd(durability);
  return report;
}

std::vector<std::size_t> complete_case_rows(const Dataset& data, const SplitAssignment& split) {
  std::vector<std::size_t> rows;
  for (std::size_t r : split.rows(Fold::test))
    if (data.presence[r].all()) rows.push_back(r);
  return rows;
}

ContributionReport contribution_analysis(const ModelParams& params, const ModelConfig& model_config,
                                         const Dataset& data, const SplitAssignment& split) {
  ContributionReport report;
  report.rows = complete_case_rows(data, split);
  if (report.rows.empty()) throw DataError("loo/koo: no complete-case test subjects");
  const auto& rows = report.rows;

  const Predictions ref = predict(params, model_config, data, rows);
  report.reference_peak = task_auroc(peak_sample(ref, data, rows), "complete-case peak-response");
  const TaskSample ref_t2 = durability_sample(ref, data, rows);
  report.reference_durability = try_auroc(ref_t2.scores, ref_t2.labels);

  for (Modality m : kAllModalities) {
    ModalityMask loo = full_mask();
    loo.reset(index(m));
    ModalityMask koo;
    koo.set(index(m));
    const std::vector<ModalityMask> loo_masks(rows.size(), loo);
    const std::vector<ModalityMask> koo_masks(rows.size(), koo);
    const Predictions p_loo = predict(params, model_config, data, rows, loo_masks);
    const Predictions p_koo = predict(params, model_config, data, rows, koo_masks);

    ModalityContribution& c = report.modalities[index(m)];
    c.modality = m;
    c.loo_peak = task_auroc(peak_sample(p_loo, data, rows), "leave-one-out peak-response");
    c.delta_peak = report.reference_peak - c.loo_peak;
    c.koo_peak = task_auroc(peak_sample(p_koo, data, rows), "keep-one-out peak-response");
    if (report.reference_durability) {
      const TaskSample s_loo = durability_sample(p_loo, data, rows);
      const TaskSample s_koo = durability_sample(p_koo, data, rows);
      c.loo_durability = try_auroc(s_loo.scores, s_loo.labels);
      c.delta_durability = *report.reference_durability - *c.loo_durability;
      c.koo_durability = try_auroc(s_koo.scores, s_koo.labels);
    }
  }
  return report;
}

DegradationReport degradation_sweep(const ModelParams& params, const ModelConfig& model_config, const Dataset& data,
                                    const SplitAssignment& split, std::span<const double> rhos,
                                    std::uint64_t mask_seed) {
  const auto rows = split.rows(Fold::test);
  if (rows.empty()) throw DataError("degradation: empty test fold");
  const std::size_t n = rows.size();
  const auto observed = observed_masks(data, rows);

  auto score = [&](const std::vector<ModalityMask>& masks, double& peak, double& durability) {
    const Predictions p = predict(params, model_config, data, rows, masks);
    peak = task_auroc(peak_sample(p, data, rows), "degraded peak-response");
    durability = task_auroc(durability_sample(p, data, rows), "degraded durability");
  };

  DegradationReport report;
  score(observed, report.reference_peak, report.reference_durability);
  score(std::vector<ModalityMask>(n), report.meta_only_peak, report.meta_only_durability);

  for (Modality m : kAllModalities) {
    for (std::size_t j = 0; j < rhos.size(); ++j) {
      const double rho = rhos[j];
      if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("degradation: rho outside [0, 1]");
      Rng rng(derive_seed(mask_seed, index(m) * rhos.size() + j));
      std::vector<std::size_t> positions(n);
      std::iota(positions.begin(), positions.end(), 0);
      rng.shuffle(std::span<std::size_t>(positions));
      const auto count = std::size_t(std::floor(rho * double(n)));
      auto masks = observed;
      for (std::size_t k = 0; k < count; ++k) masks[positions[k]].reset(index(m));
      DegradationPoint point{m, rho, count, 0.0, 0.0};
      score(masks, point.peak, point.durability);
      report.points.push_back(point);
    }
  }
  return report;
}

std::vector<TrainConfig> ablation_grid(const TrainConfig& base, std::vector<std::string>* names) {
  std::vector<TrainConfig> grid(5, base);
  grid[1].lambda = 0.0;
  grid[2].modality_dropout_p = 0.0;
  grid[3].lambda = 0.0;
  grid[3].modality_dropout_p = 0.0;
  grid[4].w_t2 = 1.0;
  if (names != nullptr) *names = {"full", "no_contrastive", "no_modality_dropout", "both_off", "w_t2_1"};
  return grid;
}

std::vector<AblationCell> ablation_runner(const Dataset& data, const SplitAssignment& split,
                                          const ModelConfig& model_config, const TrainConfig& base,
                                          std::size_t resamples, std::uint64_t bootstrap_seed, std::size_t workers) {
  std::vector<std::string> names;
  const auto grid = ablation_grid(base, &names);
  const std::function<AblationCell(std::size_t)> run_cell = [&](std::size_t i) {
    const TrainResult trained = train(data, split, model_config, grid[i]);
    const TestEvaluation eval = evaluate_test(trained.params, model_config, data, split, resamples, bootstrap_seed);
    AblationCell cell;
    cell.name = names[i];
    cell.lambda = grid[i].lambda;
    cell.modality_dropout_p = grid[i].modality_dropout_p;
    cell.w_t2 = grid[i].w_t2;
    cell.peak = eval.peak;
    cell.durability = eval.durability;
    cell.history = trained.history;
    return cell;
  };
  return parallel_map<AblationCell>(grid.size(), workers, run_cell);
}

}  // namespace mmfuse
