#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "mmfuse/baselines.hpp"
#include "mmfuse/experiments.hpp"
#include "mmfuse/features.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/trainer.hpp"

namespace mmfuse {

struct SplitConfig {
  SplitFractions fractions;
  std::uint64_t seed = 0;
};

struct FeatureConfig {
  std::size_t gene_top_k = 2000;
  std::optional<double> peak_cutoff;       // cohort median when empty
  std::optional<double> retention_cutoff;  // cohort median when empty
  bool strip_pt_family = true;             // false leaves PT-family columns for the audit to reject
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SplitConfig split;
  EvalConfig eval;
  BaselineConfig baselines;
  FeatureConfig features;

  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& c);
// Every key is optional and defaults to the built-in value; unknown keys and
// wrongly typed values throw ConfigError with the offending path.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace mmfuse
