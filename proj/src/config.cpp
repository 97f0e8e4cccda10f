#include "mmfuse/config.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <type_traits>
#include <set>
#include <string>

#include "mmfuse/error.hpp"

namespace mmfuse {

using nlohmann::json;

namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds are read as size_t");

// Reads fields of one JSON object and rejects anything it did not consume.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(path_ + "." + key + ": unknown key");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) { return j_.at(key); }
  std::string where(const std::string& key) const { return path_ + "." + key; }

  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw ConfigError(where(key) + ": must be finite");
  }
  void read(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where(key) + ": expected a non-negative integer");
    out = v.get<std::size_t>();
  }
  void read(const std::string& key, std::optional<double>& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (v.is_null()) {
      out.reset();
      return;
    }
    double x = 0.0;
    read(key, x);
    out = x;
  }
  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
    out = v.get<bool>();
  }
  void read_pair(const std::string& key, std::array<std::size_t, 2>& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned()) {
      throw ConfigError(where(key) + ": expected two non-negative integers");
    }
    out = {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
  }
  void read_imputation(const std::string& key, Imputation& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (v == "train_mean") out = Imputation::train_mean;
    else if (v == "zero") out = Imputation::zero;
    else throw ConfigError(where(key) + ": expected \"train_mean\" or \"zero\"");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* imputation_name(Imputation i) { return i == Imputation::zero ? "zero" : "train_mean"; }

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},     {"proj_hidden", c.proj_hidden},   {"proj_dim", c.proj_dim},
          {"shared_hidden", c.shared_hidden}, {"dropout", c.dropout},     {"n_modalities", c.n_modalities},
          {"n_meta", c.n_meta}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  Section s(j, "model");
  s.read("embed_dim", c.embed_dim);
  s.read("proj_hidden", c.proj_hidden);
  s.read("proj_dim", c.proj_dim);
  s.read_pair("shared_hidden", c.shared_hidden);
  s.read("dropout", c.dropout);
  s.read("n_modalities", c.n_modalities);
  s.read("n_meta", c.n_meta);
  return c;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  eval.validate();
  const auto& f = split.fractions;
  if (!(f.train > 0.0 && f.val > 0.0 && f.test > 0.0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must be positive and sum to 1");
  }
  if (features.gene_top_k == 0) throw ConfigError("features.gene_top_k must be positive");
  if (!(baselines.logreg.c > 0.0)) throw ConfigError("baselines.logreg.c must be positive");
  if (baselines.logreg.max_iterations == 0) throw ConfigError("baselines.logreg.max_iterations must be positive");
  if (baselines.tabmlp.epochs == 0 || baselines.tabmlp.batch_size == 0) {
    throw ConfigError("baselines.tabmlp: epochs and batch_size must be positive");
  }
}

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& e = c.eval;
  const auto& b = c.baselines;
  json j;
  j["model"] = model_config_to_json(c.model);
  j["train"] = {{"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"batch_size", t.batch_size},
                {"max_epochs", t.max_epochs},
                {"patience", t.patience},
                {"clip_norm", t.clip_norm},
                {"w_t2", t.w_t2},
                {"lambda", t.lambda},
                {"temperature", t.temperature},
                {"modality_dropout_p", t.modality_dropout_p},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"seed", t.seed}};
  j["split"] = {{"train", c.split.fractions.train},
                {"val", c.split.fractions.val},
                {"test", c.split.fractions.test},
                {"seed", c.split.seed}};
  j["eval"] = {{"bootstrap_resamples", e.bootstrap_resamples},
               {"bootstrap_seed", e.bootstrap_seed},
               {"permutations", e.permutations},
               {"permutation_seed", e.permutation_seed},
               {"degradation_rhos", e.degradation_rhos},
               {"mask_seed", e.mask_seed},
               {"workers", e.workers}};
  j["baselines"] = {{"logreg", {{"c", b.logreg.c}, {"tolerance", b.logreg.tolerance},
                                {"max_iterations", b.logreg.max_iterations}}},
                    {"tabmlp", {{"hidden", b.tabmlp.hidden},
                                {"dropout", b.tabmlp.dropout},
                                {"lr", b.tabmlp.lr},
                                {"weight_decay", b.tabmlp.weight_decay},
                                {"batch_size", b.tabmlp.batch_size},
                                {"epochs", b.tabmlp.epochs},
                                {"seed", b.tabmlp.seed}}},
                    {"raw_imputation", imputation_name(b.raw_imputation)},
                    {"embedding_imputation", imputation_name(b.embedding_imputation)}};
  j["features"] = {{"gene_top_k", c.features.gene_top_k},
                   {"peak_cutoff", c.features.peak_cutoff ? json(*c.features.peak_cutoff) : json(nullptr)},
                   {"retention_cutoff",
                    c.features.retention_cutoff ? json(*c.features.retention_cutoff) : json(nullptr)},
                   {"strip_pt_family", c.features.strip_pt_family}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "config");
  if (root.has("model")) c.model = model_config_from_json(root.at("model"));
  if (root.has("train")) {
    Section s(root.at("train"), "train");
    auto& t = c.train;
    s.read("lr", t.lr);
    s.read("weight_decay", t.weight_decay);
    s.read("batch_size", t.batch_size);
    s.read("max_epochs", t.max_epochs);
    s.read("patience", t.patience);
    s.read("clip_norm", t.clip_norm);
    s.read("w_t2", t.w_t2);
    s.read("lambda", t.lambda);
    s.read("temperature", t.temperature);
    s.read("modality_dropout_p", t.modality_dropout_p);
    s.read("adam_beta1", t.adam_beta1);
    s.read("adam_beta2", t.adam_beta2);
    s.read("adam_eps", t.adam_eps);
    s.read("seed", t.seed);
  }
  if (root.has("split")) {
    Section s(root.at("split"), "split");
    s.read("train", c.split.fractions.train);
    s.read("val", c.split.fractions.val);
    s.read("test", c.split.fractions.test);
    s.read("seed", c.split.seed);
  }
  if (root.has("eval")) {
    Section s(root.at("eval"), "eval");
    auto& e = c.eval;
    s.read("bootstrap_resamples", e.bootstrap_resamples);
    s.read("bootstrap_seed", e.bootstrap_seed);
    s.read("permutations", e.permutations);
    s.read("permutation_seed", e.permutation_seed);
    if (s.has("degradation_rhos")) {
      const json& v = s.at("degradation_rhos");
      if (!v.is_array()) throw ConfigError("eval.degradation_rhos: expected an array of numbers");
      e.degradation_rhos.clear();
      for (const auto& x : v) {
        if (!x.is_number()) throw ConfigError("eval.degradation_rhos: expected an array of numbers");
        e.degradation_rhos.push_back(x.get<double>());
      }
    }
    s.read("mask_seed", e.mask_seed);
    s.read("workers", e.workers);
  }
  if (root.has("baselines")) {
    Section s(root.at("baselines"), "baselines");
    auto& b = c.baselines;
    if (s.has("logreg")) {
      Section l(s.at("logreg"), "baselines.logreg");
      l.read("c", b.logreg.c);
      l.read("tolerance", b.logreg.tolerance);
      l.read("max_iterations", b.logreg.max_iterations);
    }
    if (s.has("tabmlp")) {
      Section m(s.at("tabmlp"), "baselines.tabmlp");
      m.read_pair("hidden", b.tabmlp.hidden);
      m.read("dropout", b.tabmlp.dropout);
      m.read("lr", b.tabmlp.lr);
      m.read("weight_decay", b.tabmlp.weight_decay);
      m.read("batch_size", b.tabmlp.batch_size);
      m.read("epochs", b.tabmlp.epochs);
      m.read("seed", b.tabmlp.seed);
    }
    s.read_imputation("raw_imputation", b.raw_imputation);
    s.read_imputation("embedding_imputation", b.embedding_imputation);
  }
  if (root.has("features")) {
    Section s(root.at("features"), "features");
    s.read("gene_top_k", c.features.gene_top_k);
    s.read("peak_cutoff", c.features.peak_cutoff);
    s.read("retention_cutoff", c.features.retention_cutoff);
    s.read("strip_pt_family", c.features.strip_pt_family);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace mmfuse
