#include "mmfuse/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "mmfuse/error.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {

constexpr std::array<int, 4> kAntibodyDays{0, 3, 7, 30};
constexpr std::array<int, 4> kCytokineDays{0, 1, 7, 14};
constexpr std::array<int, 4> kCellDays{0, 1, 3, 14};
constexpr std::array<int, 3> kGeneDays{0, 7, 14};

std::optional<double> lookup(const RawModalityTable& raw, int day, const std::string& subject, std::size_t column) {
  auto it = raw.timepoints.find(day);
  if (it == raw.timepoints.end()) return std::nullopt;
  auto row = it->second.row_of(subject);
  if (!row) return std::nullopt;
  return it->second.values(*row, column);
}

}  // namespace

Scale modality_scale(Modality m) {
  return (m == Modality::antibody || m == Modality::cell) ? Scale::linear : Scale::log;
}

std::span<const int> modality_timepoints(Modality m) {
  switch (m) {
    case Modality::antibody: return kAntibodyDays;
    case Modality::cytokine: return kCytokineDays;
    case Modality::cell: return kCellDays;
    case Modality::gene: return kGeneDays;
  }
  return {};
}

std::optional<std::size_t> FeatureTable::row_of(std::string_view subject) const {
  auto it = std::lower_bound(subject_ids.begin(), subject_ids.end(), subject);
  if (it != subject_ids.end() && *it == subject) return std::size_t(it - subject_ids.begin());
  // tables are normally sorted; fall back to a scan for unsorted input
  for (std::size_t i = 0; i < subject_ids.size(); ++i)
    if (subject_ids[i] == subject) return i;
  return std::nullopt;
}

std::optional<std::size_t> FeatureTable::column_of(std::string_view column) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == column) return i;
  return std::nullopt;
}

std::string feature_column_name(std::string_view feature, int day) {
  return std::string(feature) + "_d" + std::to_string(day);
}

ParsedColumn parse_feature_column(std::string_view column) {
  const auto pos = column.rfind("_d");
  if (pos != std::string_view::npos && pos + 2 < column.size()) {
    int day = 0;
    const char* first = column.data() + pos + 2;
    const char* last = column.data() + column.size();
    auto [ptr, ec] = std::from_chars(first, last, day);
    if (ec == std::errc() && ptr == last) return {std::string(column.substr(0, pos)), day};
  }
  return {std::string(column), std::nullopt};
}

bool is_pt_family(std::string_view feature) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return out;
  };
  const std::string f = lower(feature);
  return std::any_of(kPtFamily.begin(), kPtFamily.end(), [&](std::string_view pt) { return lower(pt) == f; });
}

double compute_lfc(double baseline, double value, Scale scale) {
  if (scale == Scale::log) return value - baseline;
  if (baseline < 0.0 || value < 0.0) {
    throw DataError("compute_lfc: negative linear-scale value (" + std::to_string(baseline) + ", " +
                    std::to_string(value) + ")");
  }
  return std::log2((value + 1.0) / (baseline + 1.0));
}

PeakLabel build_peak_label(double igg_pt_d0, double igg_pt_d14, double cutoff) {
  const double fc = compute_lfc(igg_pt_d0, igg_pt_d14, Scale::linear);
  return {fc, fc > cutoff ? 1 : 0};
}

RetentionLabel build_retention_label(std::optional<double> igg_pt_d30, std::optional<double> igg_pt_d120,
                                     double cutoff) {
  if (!igg_pt_d30 || !igg_pt_d120) return {};
  const double fc = compute_lfc(*igg_pt_d30, *igg_pt_d120, Scale::linear);
  return {fc, fc > cutoff ? 1 : 0};
}

double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

LabelSet build_label_set(const RawModalityTable& antibody, const std::set<std::string>* eligible,
                         std::optional<double> peak_cutoff, std::optional<double> retention_cutoff) {
  if (antibody.modality != Modality::antibody) throw ConfigError("build_label_set: expects the antibody table");
  for (int day : {kBaselineDay, kPeakDay}) {
    if (!antibody.timepoints.contains(day)) {
      throw DataError("build_label_set: antibody table for day " + std::to_string(day) + " is required");
    }
  }
  auto column_for = [&](int day) -> std::optional<std::size_t> {
    auto it = antibody.timepoints.find(day);
    if (it == antibody.timepoints.end()) return std::nullopt;
    auto col = it->second.column_of(kLabelAntigen);
    if (!col) throw DataError("build_label_set: antibody day " + std::to_string(day) + " lacks an IgG-PT column");
    return col;
  };
  const auto c0 = column_for(kBaselineDay);
  const auto c14 = column_for(kPeakDay);
  const auto c30 = column_for(kNearPeakDay);
  const auto c120 = column_for(kRetentionDay);

  std::set<std::string> candidates;
  for (const auto& [day, table] : antibody.timepoints) candidates.insert(table.subject_ids.begin(), table.subject_ids.end());

  struct Pending {
    std::string id;
    double fc_peak;
    std::optional<double> d30;
    std::optional<double> d120;
  };
  std::vector<Pending> cohort;
  LabelSet out;
  for (const std::string& id : candidates) {
    if (eligible && !eligible->contains(id)) continue;
    const auto d0 = lookup(antibody, kBaselineDay, id, *c0);
    const auto d14 = lookup(antibody, kPeakDay, id, *c14);
    const auto d30 = c30 ? lookup(antibody, kNearPeakDay, id, *c30) : std::nullopt;
    const auto d120 = c120 ? lookup(antibody, kRetentionDay, id, *c120) : std::nullopt;
    if (!d0 || !d14) {
      if (d30 && d120) ++out.dropped_retention_only;
      continue;
    }
    cohort.push_back({id, compute_lfc(*d0, *d14, Scale::linear), d30, d120});
  }
  if (cohort.empty()) throw DataError("build_label_set: no subject has day 0 and day 14 IgG-PT");

  std::vector<double> peaks;
  std::vector<double> retentions;
  for (const auto& p : cohort) {
    peaks.push_back(p.fc_peak);
    if (p.d30 && p.d120) retentions.push_back(compute_lfc(*p.d30, *p.d120, Scale::linear));
  }
  out.peak_cutoff = peak_cutoff ? *peak_cutoff : median(peaks);
  out.retention_cutoff = retention_cutoff ? *retention_cutoff : (retentions.empty() ? 0.0 : median(retentions));
  for (const auto& p : cohort) {
    out.subject_ids.push_back(p.id);
    out.fc_peak.push_back(p.fc_peak);
    out.y1.push_back(p.fc_peak > out.peak_cutoff ? 1 : 0);
    const auto r = build_retention_label(p.d30, p.d120, out.retention_cutoff);
    out.fc_retention.push_back(r.fc);
    out.y2.push_back(r.y2);
  }
  return out;
}

ModalityFeatures build_modality_features(const RawModalityTable& raw) {
  const auto days = modality_timepoints(raw.modality);
  auto base_it = raw.timepoints.find(kBaselineDay);
  if (base_it == raw.timepoints.end()) {
    throw DataError("build_modality_features: " + std::string(name(raw.modality)) + " has no day 0 table");
  }
  const FeatureTable& base = base_it->second;
  const std::vector<std::string>& features = base.columns;

  // column positions of each feature in every timepoint table that exists
  std::map<int, std::vector<std::size_t>> positions;
  for (int day : days) {
    auto it = raw.timepoints.find(day);
    if (it == raw.timepoints.end()) continue;
    std::vector<std::size_t> pos;
    for (const auto& f : features) {
      auto c = it->second.column_of(f);
      if (!c) {
        throw DataError("build_modality_features: " + std::string(name(raw.modality)) + " day " + std::to_string(day) +
                        " lacks column " + f);
      }
      pos.push_back(*c);
    }
    positions.emplace(day, std::move(pos));
  }

  ModalityFeatures out;
  for (int day : days)
    for (const auto& f : features) out.table.columns.push_back(feature_column_name(f, day));

  std::vector<std::string> subjects = base.subject_ids;
  std::sort(subjects.begin(), subjects.end());
  std::vector<double> values;
  for (const std::string& id : subjects) {
    std::vector<std::size_t> rows;
    bool complete = true;
    for (int day : days) {
      auto it = raw.timepoints.find(day);
      auto row = it == raw.timepoints.end() ? std::nullopt : it->second.row_of(id);
      if (!row) {
        complete = false;
        break;
      }
      rows.push_back(*row);
    }
    if (!complete) {
      out.excluded_subjects.push_back(id);
      continue;
    }
    out.table.subject_ids.push_back(id);
    const auto& base_pos = positions.at(kBaselineDay);
    for (std::size_t d = 0; d < days.size(); ++d) {
      const FeatureTable& t = raw.timepoints.at(days[d]);
      const auto& pos = positions.at(days[d]);
      for (std::size_t f = 0; f < features.size(); ++f) {
        const double baseline = base.values(rows[0], base_pos[f]);
        const double v = t.values(rows[d], pos[f]);
        if (d == 0) {
          if (raw.scale == Scale::linear && v < 0.0) throw DataError("build_modality_features: negative linear-scale value");
          values.push_back(v);
        } else {
          values.push_back(compute_lfc(baseline, v, raw.scale));
        }
      }
    }
  }
  out.table.values = Tensor2(out.table.subject_ids.size(), out.table.columns.size(), values);
  return out;
}

FeatureTable strip_pt_family(const FeatureTable& antibody) {
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < antibody.columns.size(); ++c) {
    if (!is_pt_family(parse_feature_column(antibody.columns[c]).feature)) keep.push_back(c);
  }
  FeatureTable out;
  out.subject_ids = antibody.subject_ids;
  out.values = Tensor2(antibody.subject_ids.size(), keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.columns.push_back(antibody.columns[keep[j]]);
    for (std::size_t r = 0; r < out.subject_ids.size(); ++r) out.values(r, j) = antibody.values(r, keep[j]);
  }
  return out;
}

VarianceFilterResult variance_filter_top_k(const FeatureTable& full, std::span<const std::string> train_subjects,
                                           std::size_t k) {
  const std::size_t cols = full.columns.size();
  if (k > cols) {
    throw ConfigError("variance_filter_top_k: k = " + std::to_string(k) + " exceeds " + std::to_string(cols) + " columns");
  }
  std::vector<std::size_t> train_rows;
  VarianceFilterResult out;
  for (const auto& id : train_subjects) {
    if (auto r = full.row_of(id)) {
      train_rows.push_back(*r);
      out.fit_subjects.push_back(id);
    }
  }
  if (train_rows.empty()) throw DataError("variance_filter_top_k: no training rows present in the table");

  std::vector<double> mean(cols, 0.0);
  std::vector<double> var(cols, 0.0);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r : train_rows) mean[c] += full.values(r, c);
    mean[c] /= double(train_rows.size());
    for (std::size_t r : train_rows) var[c] += (full.values(r, c) - mean[c]) * (full.values(r, c) - mean[c]);
    var[c] /= double(train_rows.size());
  }
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return var[a] > var[b]; });
  out.selected.assign(order.begin(), order.begin() + std::ptrdiff_t(k));

  out.filtered.subject_ids = full.subject_ids;
  out.filtered.values = Tensor2(full.subject_ids.size(), k);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t c = out.selected[j];
    const double sd = std::sqrt(var[c]);
    out.means.push_back(mean[c]);
    out.scales.push_back(sd > 0.0 ? sd : 1.0);
    out.filtered.columns.push_back(full.columns[c]);
    for (std::size_t r = 0; r < full.subject_ids.size(); ++r) {
      out.filtered.values(r, j) = (full.values(r, c) - out.means[j]) / out.scales[j];
    }
  }
  return out;
}

SplitAssignment stratified_split(std::span<const int> y1, const SplitFractions& fractions, std::uint64_t seed) {
  const double total = fractions.train + fractions.val + fractions.test;
  if (std::abs(total - 1.0) > 1e-9 || fractions.train <= 0.0 || fractions.val < 0.0 || fractions.test < 0.0) {
    throw ConfigError("stratified_split: fractions must be nonnegative and sum to 1");
  }
  const std::size_t n = y1.size();
  const std::array<std::size_t, 3> sizes = [&] {
    const auto val = std::size_t(std::llround(double(n) * fractions.val));
    const auto test = std::size_t(std::llround(double(n) * fractions.test));
    if (val + test > n) throw ConfigError("stratified_split: fractions leave no training subjects");
    return std::array<std::size_t, 3>{n - val - test, val, test};
  }();

  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < n; ++i) {
    if (y1[i] != 0 && y1[i] != 1) throw DataError("stratified_split: y1 must be binary");
    by_class[std::size_t(y1[i])].push_back(i);
  }
  Rng rng(seed);
  for (auto& members : by_class) rng.shuffle(std::span<std::size_t>(members));

  // Largest-remainder apportionment of the positive class across folds; the
  // negative class fills the remaining slots.
  const double n_pos = double(by_class[1].size());
  std::array<std::size_t, 3> pos_counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t f = 0; f < 3; ++f) {
    const double ideal = n == 0 ? 0.0 : n_pos * double(sizes[f]) / double(n);
    pos_counts[f] = std::size_t(std::floor(ideal));
    remainder[f] = ideal - std::floor(ideal);
    assigned += pos_counts[f];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t left = by_class[1].size() - assigned, i = 0; left > 0; i = (i + 1) % 3) {
    const std::size_t f = order[i];
    if (pos_counts[f] < sizes[f]) {
      ++pos_counts[f];
      --left;
    }
  }

  SplitAssignment split;
  split.seed = seed;
  split.folds.assign(n, Fold::train);
  std::array<std::size_t, 2> cursor{};
  for (std::size_t f = 0; f < 3; ++f) {
    const std::array<std::size_t, 2> counts{sizes[f] - pos_counts[f], pos_counts[f]};
    for (std::size_t c = 0; c < 2; ++c) {
      if (sizes[f] > 0 && counts[c] == 0) {
        throw DataError("stratified_split: fold " + std::to_string(f) + " would contain a single class");
      }
      for (std::size_t k = 0; k < counts[c]; ++k) split.folds[by_class[c][cursor[c]++]] = Fold(f);
    }
  }
  return split;
}

AuditReport leakage_audit(const AuditInput& input) {
  AuditReport report;
  auto fail = [&](const std::string& column, const std::string& why) {
    report.passed = false;
    report.offending_columns.push_back(column);
    report.findings.push_back(column + ": " + why);
  };
  for (Modality m : kAllModalities) {
    for (const std::string& column : input.columns[index(m)]) {
      const ParsedColumn parsed = parse_feature_column(column);
      if (parsed.day == kRetentionDay) fail(column, "day 120 measurements define the durability label");
      if (m == Modality::antibody && parsed.day == kPeakDay) fail(column, "antibody day 14 defines the peak label");
      if (m == Modality::antibody && is_pt_family(parsed.feature)) fail(column, "PT-family antibody feature");
    }
  }
  const std::set<std::string> train(input.train_subjects.begin(), input.train_subjects.end());
  for (const std::string& id : input.variance_fit_subjects) {
    if (!train.contains(id)) {
      report.passed = false;
      report.findings.push_back("variance filter fitted on non-training subject " + id);
    }
  }
  return report;
}

}  // namespace mmfuse
