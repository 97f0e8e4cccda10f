#include "mmfuse/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "mmfuse/baselines.hpp"
#include "mmfuse/config.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/experiments.hpp"
#include "mmfuse/features.hpp"
#include "mmfuse/io.hpp"
#include "mmfuse/parallel.hpp"
#include "mmfuse/report.hpp"
#include "mmfuse/synthetic.hpp"
#include "mmfuse/trainer.hpp"

namespace mmfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string raw;
  std::string features;
  std::string manifest;
  bool allow_audit_failure = false;
  bool check = false;

  std::optional<std::uint64_t> seed, split_seed, permutation_seed, bootstrap_seed, mask_seed;
  std::optional<double> lr, weight_decay, lambda, temperature, modality_dropout, w_t2;
  std::optional<std::size_t> max_epochs, patience, batch_size, workers, permutations, resamples;
  std::vector<double> rhos;

  SyntheticSpec synth;
  std::vector<double> missing_rates;
  std::string peak_modality = "cytokine";
  std::string durability_modality = "antibody";
};

// Collects the artifacts of one command and writes its manifest.
class Run {
 public:
  Run(std::string command, const std::vector<std::string>& argv, const fs::path& out_dir)
      : out_dir_(out_dir) {
    manifest_.command = std::move(command);
    manifest_.argv = argv;
    manifest_.seeds = json::object();
    fs::create_directories(out_dir_);
  }

  const fs::path& dir() const { return out_dir_; }
  fs::path path(const std::string& rel) const { return out_dir_ / rel; }

  void input(const fs::path& p) { manifest_.inputs[p.string()] = sha256_file(p); }
  void seed(const std::string& key, std::uint64_t value) { manifest_.seeds[key] = value; }
  void config(const RunConfig& c) { manifest_.config = to_json(c); }
  void config_json(json j) { manifest_.config = std::move(j); }

  // Registers a file already written under out_dir.
  void output(const std::string& rel) { manifest_.outputs[rel] = sha256_file(path(rel)); }
  void output_json(const std::string& rel, const json& j) {
    write_text(path(rel), dump(j));
    output(rel);
  }

  void finish() { write_text(path("manifest.json"), dump(to_json(manifest_))); }

 private:
  fs::path out_dir_;
  RunManifest manifest_;
};

bool config_sets_embed_dim(const std::string& path) {
  if (path.empty()) return false;
  const json j = json::parse(read_text(path), nullptr, false);
  return j.is_object() && j.contains("model") && j["model"].is_object() && j["model"].contains("embed_dim");
}

RunConfig resolve_config(const Options& o, Run* run) {
  RunConfig c;
  if (!o.config.empty()) {
    c = load_run_config(o.config);
    if (run) run->input(o.config);
  }
  auto set = [](auto& field, const auto& value) {
    if (value) field = *value;
  };
  set(c.train.seed, o.seed);
  set(c.train.lr, o.lr);
  set(c.train.weight_decay, o.weight_decay);
  set(c.train.lambda, o.lambda);
  set(c.train.temperature, o.temperature);
  set(c.train.modality_dropout_p, o.modality_dropout);
  set(c.train.w_t2, o.w_t2);
  set(c.train.max_epochs, o.max_epochs);
  set(c.train.patience, o.patience);
  set(c.train.batch_size, o.batch_size);
  set(c.split.seed, o.split_seed);
  set(c.eval.permutation_seed, o.permutation_seed);
  set(c.eval.bootstrap_seed, o.bootstrap_seed);
  set(c.eval.mask_seed, o.mask_seed);
  set(c.eval.permutations, o.permutations);
  set(c.eval.bootstrap_resamples, o.resamples);
  if (!o.rhos.empty()) c.eval.degradation_rhos = o.rhos;
  c.eval.workers = o.workers ? *o.workers : workers_from_env(c.eval.workers);
  c.validate();
  return c;
}

struct Loaded {
  Dataset data;
  SplitAssignment split;
  std::string split_source;
};

Loaded load_inputs(const Options& o, RunConfig& c, Run& run) {
  if (o.data.empty()) throw ConfigError("--data is required");
  const fs::path dir(o.data);
  Loaded l;
  l.data = load_dataset(dir);
  run.input(dir / "labels.csv");
  run.input(dir / "subjects.csv");
  for (Modality m : kAllModalities) run.input(dir / "embeddings" / (std::string(name(m)) + ".csv"));

  if (config_sets_embed_dim(o.config)) {
    if (c.model.embed_dim != l.data.embed_dim()) {
      throw ConfigError("model.embed_dim = " + std::to_string(c.model.embed_dim) + " but embeddings have " +
                        std::to_string(l.data.embed_dim()) + " columns");
    }
  } else {
    c.model.embed_dim = l.data.embed_dim();
  }

  if (auto split = read_split(dir / "split.csv", l.data)) {
    l.split = *split;
    l.split.seed = c.split.seed;
    l.split_source = (dir / "split.csv").string();
    run.input(dir / "split.csv");
  } else {
    l.split = stratified_split(l.data.y1, c.split.fractions, c.split.seed);
    l.split_source = "stratified";
  }
  run.config(c);
  run.seed("split", c.split.seed);
  return l;
}

Checkpoint load_model(const Options& o, const RunConfig& c, Run& run) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Checkpoint ck = load_checkpoint(o.checkpoint);
  run.input(o.checkpoint);
  if (ck.config.embed_dim != c.model.embed_dim) {
    throw ConfigError("checkpoint embed_dim " + std::to_string(ck.config.embed_dim) + " does not match data width " +
                      std::to_string(c.model.embed_dim));
  }
  return ck;
}

json split_summary(const Loaded& l) {
  return {{"source", l.split_source},
          {"train", l.split.rows(Fold::train).size()},
          {"val", l.split.rows(Fold::val).size()},
          {"test", l.split.rows(Fold::test).size()},
          {"test_durability_labeled", l.split.labeled_rows(Fold::test, l.data.y2).size()}};
}

void write_predictions(Run& run, const Loaded& l, const TestEvaluation& e) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < e.rows.size(); ++i) {
    const std::size_t r = e.rows[i];
    std::vector<std::string> row{l.data.subject_ids[r], std::to_string(l.data.y1[r]), std::to_string(l.data.y2[r]),
                                 format_double(e.predictions.peak[i]), format_double(e.predictions.durability[i])};
    for (std::size_t m = 0; m < kModalityCount; ++m) row.push_back(format_double(e.predictions.attention(i, m)));
    rows.push_back(std::move(row));
  }
  std::vector<std::string> header{"subject_id", "y1", "y2", "score_peak", "score_durability"};
  for (Modality m : kAllModalities) header.push_back("attention_" + std::string(name(m)));
  write_csv(run.path("predictions.csv"), header, rows);
  run.output("predictions.csv");
}

// ---- commands --------------------------------------------------------------

void cmd_synth(const Options& o, const std::vector<std::string>& argv, std::ostream& out) {
  SyntheticSpec spec = o.synth;
  if (!o.missing_rates.empty()) {
    if (o.missing_rates.size() != kModalityCount) throw ConfigError("--missing-rates needs four values");
    std::copy(o.missing_rates.begin(), o.missing_rates.end(), spec.missing_rates.begin());
  }
  auto modality = [](const std::string& s) {
    auto m = parse_modality(s);
    if (!m) throw ConfigError("unknown modality '" + s + "'");
    return *m;
  };
  spec.peak_modality = modality(o.peak_modality);
  spec.durability_modality = modality(o.durability_modality);
  Run run("synth", argv, o.out);
  const SyntheticCohort cohort = generate_synthetic_cohort(spec);
  save_dataset(run.dir(), cohort.data, &cohort.fc_peak, &cohort.fc_retention);
  run.output("labels.csv");
  run.output("subjects.csv");
  for (Modality m : kAllModalities) run.output("embeddings/" + std::string(name(m)) + ".csv");

  json rates = json::object();
  for (Modality m : kAllModalities) {
    std::size_t absent = 0;
    for (const auto& p : cohort.data.presence) absent += p.test(index(m)) ? 0 : 1;
    rates[std::string(name(m))] = double(absent) / double(cohort.data.size());
  }
  const auto labeled = std::count_if(cohort.data.y2.begin(), cohort.data.y2.end(), [](int y) { return y != -1; });
  json spec_json = {{"n", spec.n},
                    {"embed_dim", spec.embed_dim},
                    {"missing_rates", spec.missing_rates},
                    {"peak_modality", std::string(name(spec.peak_modality))},
                    {"durability_modality", std::string(name(spec.durability_modality))},
                    {"signal_strength", spec.signal_strength},
                    {"background_strength", spec.background_strength},
                    {"label_spearman", spec.label_spearman},
                    {"unlabeled_fraction", spec.unlabeled_fraction},
                    {"cohorts", spec.cohorts},
                    {"seed", spec.seed}};
  run.config_json({{"synthetic", spec_json}});
  run.seed("synthetic", spec.seed);
  run.output_json("synth.json", {{"spec", spec_json},
                                 {"n", cohort.data.size()},
                                 {"n_durability_labeled", labeled},
                                 {"realized_spearman", cohort.realized_spearman},
                                 {"realized_missing_rates", rates}});
  run.finish();
  out << "synth: wrote " << cohort.data.size() << " subjects to " << o.out << "\n";
}

void cmd_prepare(const Options& o, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  if (o.raw.empty()) throw ConfigError("--raw is required");
  Run run("prepare", argv, o.out);
  RunConfig c = resolve_config(o, &run);
  run.config(c);
  run.seed("split", c.split.seed);
  const fs::path raw_dir(o.raw);

  const auto subjects = read_subjects(raw_dir / "subjects.csv");
  run.input(raw_dir / "subjects.csv");
  std::vector<fs::path> raw_files;
  for (const auto& entry : fs::directory_iterator(raw_dir))
    if (entry.path().extension() == ".csv" && entry.path().filename() != "subjects.csv")
      raw_files.push_back(entry.path());
  std::sort(raw_files.begin(), raw_files.end());
  for (const auto& p : raw_files) run.input(p);

  std::set<std::string> eligible;
  for (const auto& [id, info] : subjects) eligible.insert(id);
  std::array<RawModalityTable, kModalityCount> raw;
  for (Modality m : kAllModalities) raw[index(m)] = read_raw_modality(raw_dir, m);
  const LabelSet labels =
      build_label_set(raw[index(Modality::antibody)], &eligible, c.features.peak_cutoff, c.features.retention_cutoff);
  const std::set<std::string> labeled(labels.subject_ids.begin(), labels.subject_ids.end());

  SplitAssignment split = stratified_split(labels.y1, c.split.fractions, c.split.seed);
  std::vector<std::string> train_ids;
  for (std::size_t i = 0; i < labels.subject_ids.size(); ++i)
    if (split.folds[i] == Fold::train) train_ids.push_back(labels.subject_ids[i]);

  json summary = {{"n_labeled", labels.subject_ids.size()},
                  {"peak_cutoff", labels.peak_cutoff},
                  {"retention_cutoff", labels.retention_cutoff},
                  {"dropped_retention_only", labels.dropped_retention_only},
                  {"modalities", json::object()}};
  AuditInput audit_input;
  audit_input.train_subjects = train_ids;
  std::array<FeatureTable, kModalityCount> tables;
  for (Modality m : kAllModalities) {
    json info;
    const auto& days = modality_timepoints(m);
    std::vector<int> missing_days;
    for (int day : days)
      if (!raw[index(m)].timepoints.contains(day)) missing_days.push_back(day);
    if (!raw[index(m)].timepoints.contains(kBaselineDay)) {
      err << "prepare: " << name(m) << " has no day 0 table; modality skipped\n";
      tables[index(m)] = FeatureTable{};
      info["excluded"] = json::array();
      info["missing_timepoints"] = missing_days;
      summary["modalities"][std::string(name(m))] = info;
      continue;
    }
    ModalityFeatures built = build_modality_features(raw[index(m)]);
    FeatureTable t = m == Modality::antibody && c.features.strip_pt_family ? strip_pt_family(built.table)
                                                                           : built.table;
    // keep labeled subjects only
    FeatureTable kept;
    kept.columns = t.columns;
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < t.subject_ids.size(); ++r) {
      if (!labeled.contains(t.subject_ids[r])) continue;
      kept.subject_ids.push_back(t.subject_ids[r]);
      rows.push_back(r);
    }
    kept.values = gather_rows(t.values, rows);
    std::size_t excluded_labeled = 0;
    for (const auto& id : built.excluded_subjects) excluded_labeled += labeled.contains(id) ? 1 : 0;
    if (excluded_labeled > 0) {
      err << "prepare: " << name(m) << ": " << excluded_labeled
          << " labeled subjects lack a required timepoint and were excluded\n";
    }
    info["excluded"] = built.excluded_subjects;
    info["missing_timepoints"] = missing_days;
    if (m == Modality::gene && !kept.subject_ids.empty()) {
      std::size_t k = c.features.gene_top_k;
      if (k > kept.columns.size()) {
        err << "prepare: gene has " << kept.columns.size() << " columns; keeping all of them\n";
        k = kept.columns.size();
      }
      VarianceFilterResult vf = variance_filter_top_k(kept, train_ids, k);
      audit_input.variance_fit_subjects = vf.fit_subjects;
      info["variance_filter"] = {{"k", k}, {"fit_subjects", vf.fit_subjects.size()}};
      kept = std::move(vf.filtered);
    }
    info["subjects"] = kept.subject_ids.size();
    info["columns"] = kept.columns.size();
    summary["modalities"][std::string(name(m))] = info;
    audit_input.columns[index(m)] = kept.columns;
    tables[index(m)] = std::move(kept);
  }

  const AuditReport audit = leakage_audit(audit_input);
  run.output_json("audit.json", to_json(audit));
  if (!audit.passed && !o.allow_audit_failure) {
    run.finish();
    std::string names;
    for (const auto& col : audit.offending_columns) names += " " + col;
    for (const auto& f : audit.findings) err << "audit: " << f << "\n";
    throw AuditError("leakage audit failed:" + (names.empty() ? std::string(" variance filter fit") : names));
  }

  for (Modality m : kAllModalities) {
    const std::string rel = "features/" + std::string(name(m)) + ".csv";
    write_feature_table(run.path(rel), tables[index(m)]);
    run.output(rel);
  }
  std::vector<std::vector<std::string>> label_rows;
  for (std::size_t i = 0; i < labels.subject_ids.size(); ++i) {
    label_rows.push_back({labels.subject_ids[i], std::to_string(labels.y1[i]), std::to_string(labels.y2[i]),
                          format_double(labels.fc_peak[i]),
                          labels.fc_retention[i] ? format_double(*labels.fc_retention[i]) : ""});
  }
  write_csv(run.path("labels.csv"), {"subject_id", "y1", "y2", "fc_peak", "fc_retention"}, label_rows);
  run.output("labels.csv");
  std::map<std::string, SubjectInfo> kept_subjects;
  for (const auto& id : labels.subject_ids) kept_subjects[id] = subjects.at(id);
  write_subjects(run.path("subjects.csv"), kept_subjects);
  run.output("subjects.csv");
  write_split(run.path("split.csv"), labels.subject_ids, split);
  run.output("split.csv");
  run.output_json("prepare.json", summary);
  run.finish();
  out << "prepare: " << labels.subject_ids.size() << " labeled subjects, audit "
      << (audit.passed ? "passed" : "FAILED (overridden)") << "\n";
}

void cmd_train(const Options& o, const std::vector<std::string>& argv, std::ostream& out) {
  Run run("train", argv, o.out);
  RunConfig c = resolve_config(o, &run);
  Loaded l = load_inputs(o, c, run);
  run.seed("train", c.train.seed);
  const TrainResult r = train(l.data, l.split, c.model, c.train);
  save_checkpoint(run.path("checkpoint.bin"), c.model, r.params);
  run.output("checkpoint.bin");
  json history = to_json(r.history);
  history["split"] = split_summary(l);
  run.output_json("history.json", history);
  write_history_csv(run.path("history.csv"), r.history);
  run.output("history.csv");
  run.finish();
  const auto& best = r.history.epochs.at(r.history.best_epoch);
  out << "train: best epoch " << best.epoch << ", val mean AUROC " << best.val_mean << "\n";
}

void cmd_evaluate(const Options& o, const std::vector<std::string>& argv, std::ostream& out, bool bootstrap_only) {
  const std::string command = bootstrap_only ? "bootstrap" : "evaluate";
  Run run(command, argv, o.out);
  RunConfig c = resolve_config(o, &run);
  Loaded l = load_inputs(o, c, run);
  const Checkpoint ck = load_model(o, c, run);
  run.seed("bootstrap", c.eval.bootstrap_seed);
  const TestEvaluation e =
      evaluate_test(ck.params, ck.config, l.data, l.split, c.eval.bootstrap_resamples, c.eval.bootstrap_seed);
  json report = {{"split", split_summary(l)},
                 {"resamples", c.eval.bootstrap_resamples},
                 {"peak", to_json(e.peak)},
                 {"durability", to_json(e.durability)}};
  if (bootstrap_only) {
    std::vector<std::vector<std::string>> rows;
    for (const auto* task : {&e.peak, &e.durability}) {
      const std::string label = task == &e.peak ? "peak" : "durability";
      for (std::size_t b = 0; b < task->ci.samples.size(); ++b)
        rows.push_back({label, std::to_string(b), format_double(task->ci.samples[b])});
    }
    write_csv(run.path("bootstrap_samples.csv"), {"task", "kept_index", "auroc"}, rows);
    run.output("bootstrap_samples.csv");
  } else {
    write_predictions(run, l, e);
  }
  run.output_json(command + ".json", report);
  run.finish();
  out << command << ": peak " << e.peak.auroc << " [" << e.peak.ci.lo << ", " << e.peak.ci.hi << "], durability "
      << e.durability.auroc << " [" << e.durability.ci.lo << ", " << e.durability.ci.hi << "]\n";
}

void cmd_permute(const Options& o, const std::vector<std::string>& argv, std::ostream& out) {
  Run run("permute", argv, o.out);
  RunConfig c = resolve_config(o, &run);
  Loaded l = load_inputs(o, c, run);
  TaskAurocs observed;
  if (!o.checkpoint.empty()) {
    const Checkpoint ck = load_model(o, c, run);
    observed = test_aurocs(ck.params, ck.config, l.data, l.split);
  } else {
    run.seed("train", c.train.seed);
    const TrainResult r = train(l.data, l.split, c.model, c.train);
    observed = test_aurocs(r.params, c.model, l.data, l.split);
  }
  run.seed("permutation", c.eval.permutation_seed);
  const PermutationReport report = permutation_test(l.data, l.split, c.model, c.train, observed, c.eval.permutations,
                                                    c.eval.permutation_seed, c.eval.workers);
  json j = to_json(report);
  j["split"] = split_summary(l);
  run.output_json("permute.json", j);
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : report.runs) {
    rows.push_back({std::to_string(r.index), std::to_string(r.attempts), std::to_string(r.seed),
                    format_double(r.peak), format_double(r.durability)});
  }
  write_csv(run.path("permute_null.csv"), {"index", "attempts", "seed", "auroc_peak", "auroc_durability"}, rows);
  run.output("permute_null.csv");
  run.finish();
  out << "permute: n = " << report.runs.size() << ", p_peak = " << report.p_peak
      << ", p_durability = " << report.p_durability << "\n";
}

void cmd_ablate(const Options& o, const std::vector<std::string>& argv, std::ostream& out) {
  Run run("ablate", argv, o.out);
  RunConfig c = resolve_config(o, &run);
  Loaded l = load_inputs(o, c, run);
  run.seed("train", c.train.seed);
  run.seed("bootstrap", c.eval.bootstrap_seed);
  const auto cells = ablation_runner(l.data, l.split, c.model, c.train, c.eval.bootstrap_resamples,
                                     c.eval.bootstrap_seed, c.eval.workers);
  json table = json::array();
  std::vector<std::vector<std::string>> rows;
  for (const auto& cell : cells) {
    table.push_back(to_json(cell));
    rows.push_back({cell.name, format_double(cell.lambda), format_double(cell.modality_dropout_p),
                    format_double(cell.w_t2), format_double(cell.peak.auroc), format_double(cell.peak.ci.lo),
                    format_double(cell.peak.ci.hi), format_double(cell.durability.auroc),
                    format_double(cell.durability.ci.lo), format_double(cell.durability.ci.hi)});
    out << "ablate: " << cell.name << " peak " << cell.peak.auroc << " durability " << cell.durability.auroc << "\n";
  }
  run.output_json("ablate.json", {{"split", split_summary(l)}, {"cells", table}});
  write_csv(run.path("ablate.csv"),
            {"name", "lambda", "modality_dropout_p", "w_t2", "auroc_peak", "peak_lo", "peak_hi", "auroc_durability",
             "durability_lo", "durability_hi"},
            rows);
  run.output("ablate.csv");
  run.finish();
}

void cmd_loo_koo(const Options& o, const std::vector<std::string>& argv, std::ostream& out) {
  Run run("loo-koo", argv, o.out);
  RunConfig c = resolve_config(o, &run);
  Loaded l = load_inputs(o, c, run);
  const Checkpoint ck = load_model(o, c, run);
  const ContributionReport r = contribution_analysis(ck.params, ck.config, l.data, l.split);
  const TaskAurocs full = test_aurocs(ck.params, ck.config, l.data, l.split);
  json j = to_json(r);
  j["full_test"] = {{"peak", full.peak}, {"durability", full.durability}};
  run.output_json("loo_koo.json", j);
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::vector<std::vector<std::string>> rows;
  for (const auto& m : r.modalities) {
    rows.push_back({std::string(name(m.modality)), format_double(m.loo_peak), format_double(m.delta_peak),
                    format_double(m.koo_peak), opt(m.loo_durability), opt(m.delta_durability),
                    opt(m.koo_durability)});
  }
  write_csv(run.path("loo_koo.csv"),
            {"modality", "loo_peak", "delta_peak", "koo_peak", "loo_durability", "delta_durability",
             "koo_durability"},
            rows);
  run.output("loo_koo.csv");
  run.finish();
  out << "loo-koo: " << r.rows.size() << " complete-case test subjects, reference peak " << r.reference_peak << "\n";
}

void cmd_degrade(const Options& o, const std::vector<std::string>& argv, std::ostream& out) {
  Run run("degrade", argv, o.out);
  RunConfig c = resolve_config(o, &run);
  Loaded l = load_inputs(o, c, run);
  const Checkpoint ck = load_model(o, c, run);
  run.seed("mask", c.eval.mask_seed);
  const DegradationReport r =
      degradation_sweep(ck.params, ck.config, l.data, l.split, c.eval.degradation_rhos, c.eval.mask_seed);
  run.output_json("degrade.json", to_json(r));
  write_degradation_csv(run.path("degrade.csv"), r);
  run.output("degrade.csv");
  run.finish();
  out << "degrade: meta-only peak " << r.meta_only_peak << ", durability " << r.meta_only_durability << "\n";
}

void cmd_baselines(const Options& o, const std::vector<std::string>& argv, std::ostream& out) {
  Run run("baselines", argv, o.out);
  RunConfig c = resolve_config(o, &run);
  Loaded l = load_inputs(o, c, run);
  run.seed("bootstrap", c.eval.bootstrap_seed);
  run.seed("tabmlp", c.baselines.tabmlp.seed);
  std::vector<BaselineResult> results;
  if (!o.features.empty()) {
    std::array<FeatureBlock, kModalityCount> blocks;
    for (Modality m : kAllModalities) {
      const fs::path p = fs::path(o.features) / (std::string(name(m)) + ".csv");
      const FeatureTable t = read_feature_table(p);
      run.input(p);
      auto& b = blocks[index(m)];
      b.values = Tensor2(l.data.size(), t.columns.size());
      b.present.assign(l.data.size(), false);
      for (std::size_t i = 0; i < l.data.size(); ++i) {
        if (auto r = t.row_of(l.data.subject_ids[i])) {
          b.present[i] = true;
          std::copy(t.values.row(*r).begin(), t.values.row(*r).end(), b.values.row(i).begin());
        }
      }
    }
    auto raw = run_baselines(blocks, "raw", c.baselines.raw_imputation, l.data, l.split, c.baselines,
                             c.eval.bootstrap_resamples, c.eval.bootstrap_seed);
    results.insert(results.end(), raw.begin(), raw.end());
  }
  auto emb = run_baselines(embedding_blocks(l.data), "embeddings", c.baselines.embedding_imputation, l.data, l.split,
                           c.baselines, c.eval.bootstrap_resamples, c.eval.bootstrap_seed);
  results.insert(results.end(), emb.begin(), emb.end());

  json table = json::array();
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : results) {
    table.push_back(to_json(r, l.data.subject_ids));
    rows.push_back({r.model, r.features, r.task, std::to_string(r.n_train), std::to_string(r.eval.n),
                    format_double(r.eval.auroc), format_double(r.eval.ci.lo), format_double(r.eval.ci.hi),
                    r.degenerate ? "1" : "0", r.converged ? "1" : "0"});
    out << "baselines: " << r.model << "/" << r.features << "/" << r.task << " " << r.eval.auroc
        << (r.degenerate ? " (degenerate)" : "") << (r.converged ? "" : " (not converged)") << "\n";
  }
  run.output_json("baselines.json", {{"split", split_summary(l)}, {"results", table}});
  write_csv(run.path("baselines.csv"),
            {"model", "features", "task", "n_train", "n_test", "auroc", "ci_lo", "ci_hi", "degenerate", "converged"},
            rows);
  run.output("baselines.csv");
  run.finish();
}

int cmd_replay(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.manifest.empty()) throw ConfigError("--manifest is required");
  const RunManifest original = manifest_from_json(json::parse(read_text(o.manifest)));
  std::vector<std::string> args = original.argv;
  fs::path out_dir;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--out") {
      if (!o.out.empty()) args[i + 1] = o.out;
      out_dir = args[i + 1];
    }
  }
  if (out_dir.empty()) throw ConfigError("manifest argv has no --out");
  const int code = run_cli(args, out, err);
  if (code != kExitOk || !o.check) return code;
  const RunManifest replayed = manifest_from_json(json::parse(read_text(out_dir / "manifest.json")));
  std::size_t mismatches = 0;
  for (const auto& [rel, digest] : original.outputs) {
    auto it = replayed.outputs.find(rel);
    if (it == replayed.outputs.end() || it->second != digest) {
      err << "replay: " << rel << " differs\n";
      ++mismatches;
    }
  }
  if (replayed.outputs.size() != original.outputs.size()) ++mismatches;
  if (mismatches > 0) throw ConfigError("replay produced " + std::to_string(mismatches) + " differing outputs");
  out << "replay: " << original.outputs.size() << " outputs identical\n";
  return kExitOk;
}

void add_overrides(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "training seed");
  app->add_option("--split-seed", o.split_seed, "split seed");
  app->add_option("--lr", o.lr, "base learning rate");
  app->add_option("--weight-decay", o.weight_decay, "AdamW weight decay");
  app->add_option("--max-epochs", o.max_epochs, "maximum epochs");
  app->add_option("--patience", o.patience, "early-stopping patience");
  app->add_option("--batch-size", o.batch_size, "minibatch size");
  app->add_option("--lambda", o.lambda, "contrastive weight");
  app->add_option("--temperature", o.temperature, "contrastive temperature");
  app->add_option("--modality-dropout", o.modality_dropout, "modality dropout probability");
  app->add_option("--w-t2", o.w_t2, "durability loss weight");
  app->add_option("--resamples", o.resamples, "bootstrap resamples");
  app->add_option("--bootstrap-seed", o.bootstrap_seed, "bootstrap seed");
  app->add_option("--workers", o.workers, "worker threads (default: MMFUSE_WORKERS or config)");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Multimodal fusion training and evaluation", "mmfuse"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  auto* synth = app.add_subcommand("synth", "write a synthetic cohort in the ingestion format");
  synth->add_option("--out", o.out, "output dataset directory")->required();
  synth->add_option("--n", o.synth.n, "subjects");
  synth->add_option("--dim", o.synth.embed_dim, "embedding width");
  synth->add_option("--missing-rates", o.missing_rates, "four per-modality missing rates")->delimiter(',');
  synth->add_option("--signal", o.synth.signal_strength, "planted trait strength");
  synth->add_option("--background", o.synth.background_strength, "trait strength in other modalities");
  synth->add_option("--spearman", o.synth.label_spearman, "target rank correlation of the traits");
  synth->add_option("--unlabeled-fraction", o.synth.unlabeled_fraction, "fraction without durability label");
  synth->add_option("--cohorts", o.synth.cohorts, "number of cohorts");
  synth->add_option("--peak-modality", o.peak_modality, "modality carrying the peak trait");
  synth->add_option("--durability-modality", o.durability_modality, "modality carrying the durability trait");
  synth->add_option("--seed", o.synth.seed, "generator seed");

  auto* prepare = app.add_subcommand("prepare", "build feature tables, labels, split and leakage audit");
  prepare->add_option("--raw", o.raw, "raw table directory")->required()->check(CLI::ExistingDirectory);
  prepare->add_option("--out", o.out, "output directory")->required();
  prepare->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  prepare->add_option("--split-seed", o.split_seed, "split seed");
  prepare->add_flag("--allow-audit-failure", o.allow_audit_failure, "write outputs even if the audit fails");

  auto data_command = [&](const char* name, const char* help, bool needs_checkpoint) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--data", o.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", o.out, "output directory")->required();
    auto* ck = sub->add_option("--checkpoint", o.checkpoint, "model checkpoint");
    if (needs_checkpoint) ck->required();
    add_overrides(sub, o);
    return sub;
  };
  auto* train_cmd = data_command("train", "train the fusion model", false);
  auto* evaluate = data_command("evaluate", "test AUROC with bootstrap intervals", true);
  auto* bootstrap = data_command("bootstrap", "bootstrap resample distribution of test AUROC", true);
  auto* permute = data_command("permute", "label-permutation test with retraining", false);
  permute->add_option("--n", o.permutations, "permutations");
  permute->add_option("--permutation-seed", o.permutation_seed, "base seed of the permutations");
  auto* ablate = data_command("ablate", "five-cell ablation grid", false);
  auto* loo_koo = data_command("loo-koo", "leave-one-out and keep-one-out modality masking", true);
  auto* degrade = data_command("degrade", "graceful-degradation sweep", true);
  degrade->add_option("--mask-seed", o.mask_seed, "masking seed");
  degrade->add_option("--rhos", o.rhos, "masking fractions")->delimiter(',');
  auto* baselines = data_command("baselines", "logistic regression and TabMLP baselines", false);
  baselines->add_option("--features", o.features, "prepared feature directory for raw-feature baselines")
      ->check(CLI::ExistingDirectory);

  auto* replay = app.add_subcommand("replay", "re-run a command from its manifest");
  replay->add_option("--manifest", o.manifest, "manifest.json of the original run")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", o.out, "write to this directory instead of the original");
  replay->add_flag("--check", o.check, "fail unless every output is byte-identical");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o_msg, e_msg;
    const int code = app.exit(e, o_msg, e_msg);
    out << o_msg.str();
    err << e_msg.str();
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*synth) cmd_synth(o, args, out);
    else if (*prepare) cmd_prepare(o, args, out, err);
    else if (*train_cmd) cmd_train(o, args, out);
    else if (*evaluate) cmd_evaluate(o, args, out, false);
    else if (*bootstrap) cmd_evaluate(o, args, out, true);
    else if (*permute) cmd_permute(o, args, out);
    else if (*ablate) cmd_ablate(o, args, out);
    else if (*loo_koo) cmd_loo_koo(o, args, out);
    else if (*degrade) cmd_degrade(o, args, out);
    else if (*baselines) cmd_baselines(o, args, out);
    else if (*replay) return cmd_replay(o, out, err);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const AuditError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace mmfuse
