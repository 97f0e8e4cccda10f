#include "mmfuse/report.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include <openssl/evp.h>

#include "mmfuse/error.hpp"
#include "mmfuse/io.hpp"

namespace mmfuse {

using nlohmann::json;

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const TrainHistory& h) {
  json epochs = json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"train_loss", e.train_loss},
                      {"val_auroc_peak", e.val_auroc_peak},
                      {"val_auroc_durability", optional_number(e.val_auroc_durability)},
                      {"val_mean", e.val_mean},
                      {"mean_uses_peak_only", !e.val_auroc_durability.has_value()}});
  }
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"stopped_epoch", h.stopped_epoch},
          {"early_stopped", h.early_stopped}};
}

json to_json(const BootstrapCi& ci) {
  return {{"lo", ci.lo}, {"hi", ci.hi}, {"kept", ci.kept}, {"discarded", ci.discarded},
          {"excludes_point", ci.excludes_point}};
}

json to_json(const TaskEvaluation& e) {
  return {{"n", e.n}, {"n_positive", e.n_positive}, {"auroc", e.auroc}, {"ci", to_json(e.ci)}};
}

json to_json(const PermutationReport& r) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"index", run.index},
                    {"attempts", run.attempts},
                    {"seed", run.seed},
                    {"peak", run.peak},
                    {"durability", run.durability}});
  }
  return {{"n", r.runs.size()},
          {"observed", {{"peak", r.observed.peak}, {"durability", r.observed.durability}}},
          {"p_peak", r.p_peak},
          {"p_durability", r.p_durability},
          {"null_peak", {{"mean", r.null_mean_peak}, {"sd", r.null_sd_peak}}},
          {"null_durability", {{"mean", r.null_mean_durability}, {"sd", r.null_sd_durability}}},
          {"runs", runs}};
}

json to_json(const ContributionReport& r) {
  json mods = json::array();
  for (const auto& c : r.modalities) {
    mods.push_back({{"modality", std::string(name(c.modality))},
                    {"loo_peak", c.loo_peak},
                    {"delta_peak", c.delta_peak},
                    {"koo_peak", c.koo_peak},
                    {"loo_durability", optional_number(c.loo_durability)},
                    {"delta_durability", optional_number(c.delta_durability)},
                    {"koo_durability", optional_number(c.koo_durability)}});
  }
  return {{"n_complete_case", r.rows.size()},
          {"reference_peak", r.reference_peak},
          {"reference_durability", optional_number(r.reference_durability)},
          {"modalities", mods}};
}

json to_json(const DegradationReport& r) {
  json points = json::array();
  for (const auto& p : r.points) {
    points.push_back({{"modality", std::string(name(p.modality))},
                      {"rho", p.rho},
                      {"masked", p.masked},
                      {"peak", p.peak},
                      {"durability", p.durability}});
  }
  return {{"reference", {{"peak", r.reference_peak}, {"durability", r.reference_durability}}},
          {"meta_only", {{"peak", r.meta_only_peak}, {"durability", r.meta_only_durability}}},
          {"points", points}};
}

json to_json(const AblationCell& c) {
  return {{"name", c.name},
          {"lambda", c.lambda},
          {"modality_dropout_p", c.modality_dropout_p},
          {"w_t2", c.w_t2},
          {"peak", to_json(c.peak)},
          {"durability", to_json(c.durability)},
          {"best_epoch", c.history.best_epoch},
          {"stopped_epoch", c.history.stopped_epoch}};
}

json to_json(const BaselineResult& r, const std::vector<std::string>& subject_ids) {
  json imputed = json::array();
  for (std::size_t row : r.imputed_rows) imputed.push_back(subject_ids.at(row));
  return {{"model", r.model},           {"features", r.features},     {"task", r.task},
          {"n_train", r.n_train},       {"test", to_json(r.eval)},    {"degenerate", r.degenerate},
          {"converged", r.converged},   {"imputed_subjects", imputed}};
}

json to_json(const AuditReport& r) {
  return {{"passed", r.passed}, {"offending_columns", r.offending_columns}, {"findings", r.findings}};
}

void write_degradation_csv(const std::filesystem::path& path, const DegradationReport& r) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"none", "0", "0", format_double(r.reference_peak), format_double(r.reference_durability)});
  for (const auto& p : r.points) {
    rows.push_back({std::string(name(p.modality)), format_double(p.rho), std::to_string(p.masked),
                    format_double(p.peak), format_double(p.durability)});
  }
  rows.push_back({"all", "1", "", format_double(r.meta_only_peak), format_double(r.meta_only_durability)});
  write_csv(path, {"modality", "rho", "masked", "auroc_peak", "auroc_durability"}, rows);
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : h.epochs) {
    rows.push_back({std::to_string(e.epoch), format_double(e.lr), format_double(e.train_loss),
                    format_double(e.val_auroc_peak),
                    e.val_auroc_durability ? format_double(*e.val_auroc_durability) : "",
                    format_double(e.val_mean)});
  }
  write_csv(path, {"epoch", "lr", "train_loss", "val_auroc_peak", "val_auroc_durability", "val_mean"}, rows);
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string() + " for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx, buf.data(), std::size_t(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest;
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

json to_json(const RunManifest& m) {
  return {{"tool_version", kToolVersion}, {"command", m.command}, {"argv", m.argv},    {"config", m.config},
          {"seeds", m.seeds},             {"inputs", m.inputs},   {"outputs", m.outputs}};
}

RunManifest manifest_from_json(const json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config = j.at("config");
    m.seeds = j.at("seeds");
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace mmfuse
