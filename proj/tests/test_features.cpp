#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mmfuse/error.hpp"
#include "mmfuse/features.hpp"
#include "mmfuse/rng.hpp"

using namespace mmfuse;

namespace {

FeatureTable table(std::vector<std::string> ids, std::vector<std::string> columns, Tensor2 values) {
  return FeatureTable{std::move(ids), std::move(columns), std::move(values)};
}

RawModalityTable constant_raw(Modality m, double value, std::size_t n) {
  RawModalityTable raw;
  raw.modality = m;
  raw.scale = modality_scale(m);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("S" + std::to_string(i));
  for (int day : modality_timepoints(m)) raw.timepoints[day] = table(ids, {"F1"}, Tensor2(n, 1, value));
  return raw;
}

RawModalityTable antibody_labels(const std::vector<std::array<double, 4>>& rows) {
  // rows: d0, d14, d30, d120 (NaN = absent specimen)
  RawModalityTable raw;
  raw.modality = Modality::antibody;
  raw.scale = Scale::linear;
  const std::array<int, 4> days{0, 14, 30, 120};
  for (std::size_t d = 0; d < 4; ++d) {
    std::vector<std::string> ids;
    std::vector<double> vals;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (std::isnan(rows[i][d])) continue;
      ids.push_back("S" + std::to_string(100 + i));
      vals.push_back(rows[i][d]);
    }
    Tensor2 t(vals.size(), 1);
    for (std::size_t i = 0; i < vals.size(); ++i) t(i, 0) = vals[i];
    raw.timepoints[days[d]] = table(ids, {"IgG-PT"}, t);
  }
  return raw;
}

}  // namespace

TEST_CASE("compute_lfc") {
  CHECK(compute_lfc(5.0, 5.0, Scale::linear) == 0.0);
  CHECK(compute_lfc(3.0, 15.0, Scale::linear) == 2.0);
  CHECK(compute_lfc(3.2, 5.2, Scale::log) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK_THROWS_AS(compute_lfc(-1.0, 2.0, Scale::linear), DataError);
}

TEST_CASE("modality scales") {
  CHECK(modality_scale(Modality::antibody) == Scale::linear);
  CHECK(modality_scale(Modality::cell) == Scale::linear);
  CHECK(modality_scale(Modality::cytokine) == Scale::log);
  CHECK(modality_scale(Modality::gene) == Scale::log);
}

TEST_CASE("peak label") {
  const auto flat = build_peak_label(4.0, 4.0, 1.254);
  CHECK(flat.fc == 0.0);
  CHECK(flat.y1 == 0);
  const auto up = build_peak_label(1.0, 7.0, 1.254);
  CHECK(up.fc == 2.0);
  CHECK(up.y1 == 1);
  // tie goes to class 0
  CHECK(build_peak_label(1.0, 7.0, 2.0).y1 == 0);
}

TEST_CASE("retention label") {
  CHECK(build_retention_label(3.0, std::nullopt, -0.464).y2 == kMissingLabel);
  CHECK(build_retention_label(std::nullopt, 3.0, -0.464).y2 == kMissingLabel);
  const auto flat = build_retention_label(6.0, 6.0, -0.464);
  CHECK(flat.fc == 0.0);
  CHECK(flat.y2 == 1);
  CHECK(*build_retention_label(3.0, 1.0, -0.464).fc == -1.0);
}

TEST_CASE("label set: median cutoff self-consistency and balance") {
  Rng rng(4);
  std::vector<std::array<double, 4>> rows;
  for (int i = 0; i < 41; ++i) {
    const double d0 = rng.uniform(0, 50);
    const double d30 = rng.uniform(10, 200);
    rows.push_back({d0, d0 + rng.uniform(0, 300), d30, i % 5 == 0 ? NAN : rng.uniform(5, 150)});
  }
  const LabelSet labels = build_label_set(antibody_labels(rows));
  REQUIRE(labels.subject_ids.size() == 41);
  CHECK(median(labels.fc_peak) == labels.peak_cutoff);
  CHECK(std::count(labels.y1.begin(), labels.y1.end(), 1) == 20);
  CHECK(std::count(labels.y1.begin(), labels.y1.end(), 0) == 21);

  std::vector<double> ret;
  for (std::size_t i = 0; i < labels.fc_retention.size(); ++i) {
    CHECK((labels.y2[i] == kMissingLabel) == !labels.fc_retention[i].has_value());
    if (labels.fc_retention[i]) ret.push_back(*labels.fc_retention[i]);
  }
  REQUIRE(ret.size() == 32);
  CHECK(median(ret) == labels.retention_cutoff);
  CHECK(std::count(labels.y2.begin(), labels.y2.end(), 1) == 16);
}

TEST_CASE("label set drops subjects with only a durability label") {
  const std::vector<std::array<double, 4>> rows{{1, 7, 4, 2}, {2, 3, 4, 4}, {NAN, NAN, 5, 5}, {1, NAN, 5, 5}};
  const LabelSet labels = build_label_set(antibody_labels(rows), nullptr, 1.254, -0.464);
  CHECK(labels.subject_ids.size() == 2);
  CHECK(labels.dropped_retention_only == 2);
  CHECK(labels.y1 == std::vector<int>{1, 0});
  CHECK(labels.y2 == std::vector<int>{0, 1});
}

TEST_CASE("modality feature columns follow the timepoint design") {
  const auto ab = build_modality_features(constant_raw(Modality::antibody, 2.0, 3));
  CHECK(ab.table.columns == std::vector<std::string>{"F1_d0", "F1_d3", "F1_d7", "F1_d30"});
  const auto cy = build_modality_features(constant_raw(Modality::cytokine, 2.0, 3));
  CHECK(std::find(cy.table.columns.begin(), cy.table.columns.end(), "F1_d1") != cy.table.columns.end());
  for (Modality m : kAllModalities) {
    const auto f = build_modality_features(constant_raw(m, 2.5, 3));
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(f.table.values(r, 0) == 2.5);
      for (std::size_t c = 1; c < f.table.columns.size(); ++c) CHECK(f.table.values(r, c) == 0.0);
    }
  }
}

TEST_CASE("subjects missing a required specimen are excluded") {
  RawModalityTable raw = constant_raw(Modality::cytokine, 1.0, 3);
  raw.timepoints[1] = table({"S0", "S2"}, {"F1"}, Tensor2(2, 1, 1.0));
  const auto f = build_modality_features(raw);
  CHECK(f.table.subject_ids == std::vector<std::string>{"S0", "S2"});
  CHECK(f.excluded_subjects == std::vector<std::string>{"S1"});
}

TEST_CASE("strip_pt_family") {
  std::vector<std::string> cols;
  for (int day : modality_timepoints(Modality::antibody)) {
    for (const char* f : {"IgG-PT", "IgG1-PT", "IgG2-PT", "IgG3-PT", "IgG4-PT", "IgG-FHA", "IgG-PRN", "IgG-FIM2/3"})
      cols.push_back(feature_column_name(f, day));
  }
  const FeatureTable full = table({"S1"}, cols, Tensor2(1, cols.size(), 1.0));
  const FeatureTable stripped = strip_pt_family(full);
  CHECK(stripped.columns.size() == cols.size() - 5 * 4);
  CHECK_FALSE(stripped.column_of("IgG-PT_d3"));
  CHECK(stripped.column_of("IgG-FHA_d3"));
  CHECK(strip_pt_family(stripped).columns == stripped.columns);

  const FeatureTable fha = table({"S1"}, {"IgG-FHA_d0", "IgG-FHA_d7"}, Tensor2(1, 2, 3.0));
  CHECK(strip_pt_family(fha).columns == fha.columns);
}

TEST_CASE("variance filter") {
  Rng rng(8);
  const std::size_t n = 30, cols = 10;
  Tensor2 v(n, cols);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < cols; ++c) v(r, c) = rng.normal() * (c == 7 ? std::sqrt(10.0) * 3 : 1.0 + 0.01 * c);
  std::vector<std::string> ids, cnames;
  for (std::size_t r = 0; r < n; ++r) ids.push_back("S" + std::to_string(100 + r));
  for (std::size_t c = 0; c < cols; ++c) cnames.push_back("g" + std::to_string(c));
  const FeatureTable full = table(ids, cnames, v);
  const std::vector<std::string> train(ids.begin(), ids.begin() + 20);

  const auto top = variance_filter_top_k(full, train, 3);
  CHECK(top.selected.front() == 7);
  CHECK(top.fit_subjects == train);
  const auto all = variance_filter_top_k(full, train, cols);
  std::vector<std::size_t> sorted = all.selected;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t c = 0; c < cols; ++c) CHECK(sorted[c] == c);
  CHECK_THROWS_AS(variance_filter_top_k(full, train, cols + 1), ConfigError);

  // standardized train columns have zero mean
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 20; ++r) mean += top.filtered.values(r, c) / 20.0;
    CHECK(std::abs(mean) < 1e-12);
  }

  // permuting or altering non-train rows leaves the selection unchanged
  FeatureTable shuffled = full;
  for (std::size_t r = 20; r < n; ++r)
    for (std::size_t c = 0; c < cols; ++c) shuffled.values(r, c) = full.values(n - 1 - (r - 20), c) * 100.0;
  const auto again = variance_filter_top_k(shuffled, train, 3);
  CHECK(again.selected == top.selected);
  CHECK(again.means == top.means);
}

TEST_CASE("stratified split") {
  std::vector<int> y1(158);
  for (std::size_t i = 0; i < 158; ++i) y1[i] = i < 79 ? 1 : 0;
  const SplitAssignment s = stratified_split(y1, {}, 3);
  CHECK(s.rows(Fold::train).size() == 94);
  CHECK(s.rows(Fold::val).size() == 32);
  CHECK(s.rows(Fold::test).size() == 32);
  for (Fold f : {Fold::train, Fold::val, Fold::test}) {
    const auto rows = s.rows(f);
    const double pos = double(std::count_if(rows.begin(), rows.end(), [&](std::size_t r) { return y1[r] == 1; }));
    CHECK(std::abs(pos - rows.size() * 79.0 / 158.0) <= 1.0);
  }
  CHECK(stratified_split(y1, {}, 3).folds == s.folds);
  CHECK(stratified_split(y1, {}, 4).folds != s.folds);

  const std::vector<int> eight{1, 0, 1, 0, 1, 0, 1, 0};
  const SplitAssignment small = stratified_split(eight, {0.5, 0.25, 0.25}, 1);
  for (Fold f : {Fold::train, Fold::val, Fold::test}) {
    const auto rows = small.rows(f);
    const auto pos = std::count_if(rows.begin(), rows.end(), [&](std::size_t r) { return eight[r] == 1; });
    CHECK(pos * 2 == std::ptrdiff_t(rows.size()));
  }

  CHECK_THROWS_AS(stratified_split(eight, {0.5, 0.3, 0.3}, 1), ConfigError);
  const std::vector<int> skewed{1, 0, 0, 0, 0, 0, 0, 0};
  CHECK_THROWS_AS(stratified_split(skewed, {0.5, 0.25, 0.25}, 1), DataError);
}

TEST_CASE("leakage audit") {
  AuditInput ok;
  ok.columns[index(Modality::antibody)] = {"IgG-FHA_d0", "IgG-FHA_d7"};
  ok.columns[index(Modality::cytokine)] = {"IL6_d1", "IL6_d14"};
  ok.train_subjects = {"S1", "S2"};
  ok.variance_fit_subjects = {"S1", "S2"};
  CHECK(leakage_audit(ok).passed);

  AuditInput pt = ok;
  pt.columns[index(Modality::antibody)].push_back("IgG-PT_d7");
  const AuditReport r1 = leakage_audit(pt);
  CHECK_FALSE(r1.passed);
  CHECK(r1.offending_columns == std::vector<std::string>{"IgG-PT_d7"});

  AuditInput d14 = ok;
  d14.columns[index(Modality::antibody)].push_back("IgG-FHA_d14");
  CHECK_FALSE(leakage_audit(d14).passed);

  AuditInput fit = ok;
  fit.variance_fit_subjects.push_back("S9");
  CHECK_FALSE(leakage_audit(fit).passed);
}
