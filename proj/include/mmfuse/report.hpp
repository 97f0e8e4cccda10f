#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmfuse/baselines.hpp"
#include "mmfuse/experiments.hpp"
#include "mmfuse/features.hpp"
#include "mmfuse/trainer.hpp"

namespace mmfuse {

inline constexpr const char* kToolVersion = "mmfuse 1.0.0";

nlohmann::json to_json(const TrainHistory& h);
nlohmann::json to_json(const BootstrapCi& ci);
nlohmann::json to_json(const TaskEvaluation& e);
nlohmann::json to_json(const PermutationReport& r);
nlohmann::json to_json(const ContributionReport& r);
nlohmann::json to_json(const DegradationReport& r);
nlohmann::json to_json(const AblationCell& c);
nlohmann::json to_json(const BaselineResult& r, const std::vector<std::string>& subject_ids);
nlohmann::json to_json(const AuditReport& r);

// Delimited-text companions for plotting.
void write_degradation_csv(const std::filesystem::path& path, const DegradationReport& r);
void write_history_csv(const std::filesystem::path& path, const TrainHistory& h);

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// One manifest per run. Inputs and outputs are recorded with their digests so
// a replay can be checked byte for byte. No timestamps are written.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config;
  nlohmann::json seeds;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

// Pretty JSON with a trailing newline.
std::string dump(const nlohmann::json& j);

}  // namespace mmfuse
