#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/modality.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

enum class Scale : unsigned char { linear, log };

inline constexpr int kBaselineDay = 0;
inline constexpr int kPeakDay = 14;
inline constexpr int kNearPeakDay = 30;
inline constexpr int kRetentionDay = 120;
inline constexpr std::string_view kLabelAntigen = "IgG-PT";
inline constexpr std::array<std::string_view, 5> kPtFamily{"IgG-PT", "IgG1-PT", "IgG2-PT", "IgG3-PT", "IgG4-PT"};

Scale modality_scale(Modality m);
// Input timepoints per modality, baseline first.
std::span<const int> modality_timepoints(Modality m);

// Numeric table keyed by subject id.
struct FeatureTable {
  std::vector<std::string> subject_ids;
  std::vector<std::string> columns;
  Tensor2 values;  // subject_ids.size() x columns.size()

  std::optional<std::size_t> row_of(std::string_view subject) const;
  std::optional<std::size_t> column_of(std::string_view column) const;
};

// Per-timepoint measurement tables of one modality; a subject without a row
// at some day has no specimen for that day.
struct RawModalityTable {
  Modality modality = Modality::antibody;
  Scale scale = Scale::linear;
  std::map<int, FeatureTable> timepoints;
};

// Feature column names are "<feature>_d<day>"; day 0 holds the baseline
// value, later days hold log fold changes from baseline.
std::string feature_column_name(std::string_view feature, int day);
struct ParsedColumn {
  std::string feature;
  std::optional<int> day;
};
ParsedColumn parse_feature_column(std::string_view column);
bool is_pt_family(std::string_view feature);

double compute_lfc(double baseline, double value, Scale scale);

struct PeakLabel {
  double fc = 0.0;
  int y1 = 0;
};
PeakLabel build_peak_label(double igg_pt_d0, double igg_pt_d14, double cutoff);

struct RetentionLabel {
  std::optional<double> fc;
  int y2 = kMissingLabel;
};
RetentionLabel build_retention_label(std::optional<double> igg_pt_d30, std::optional<double> igg_pt_d120, double cutoff);

// Median of a nonempty sample (mean of the two middle values for even sizes).
double median(std::vector<double> values);

struct LabelSet {
  std::vector<std::string> subject_ids;  // sorted
  std::vector<int> y1;
  std::vector<int> y2;
  std::vector<double> fc_peak;
  std::vector<std::optional<double>> fc_retention;
  double peak_cutoff = 0.0;
  double retention_cutoff = 0.0;
  std::size_t dropped_retention_only = 0;  // had a durability label but no peak label
};

// Builds both labels from the antibody IgG-PT measurements. Only subjects in
// `eligible` (when given) with day 0 and day 14 values are kept. Cutoffs
// default to the cohort medians; values equal to a cutoff map to class 0.
LabelSet build_label_set(const RawModalityTable& antibody, const std::set<std::string>* eligible = nullptr,
                         std::optional<double> peak_cutoff = std::nullopt,
                         std::optional<double> retention_cutoff = std::nullopt);

struct ModalityFeatures {
  FeatureTable table;
  std::vector<std::string> excluded_subjects;  // lacked a required specimen
};

// Baseline plus log-fold-change columns for the modality's input timepoints.
ModalityFeatures build_modality_features(const RawModalityTable& raw);

FeatureTable strip_pt_family(const FeatureTable& antibody);

struct VarianceFilterResult {
  std::vector<std::size_t> selected;  // original column ids, by decreasing train variance
  std::vector<double> means;          // train means of the selected columns
  std::vector<double> scales;         // train standard deviations (1 where zero)
  std::vector<std::string> fit_subjects;
  FeatureTable filtered;  // all rows, selected columns, standardized with train statistics
};

VarianceFilterResult variance_filter_top_k(const FeatureTable& full, std::span<const std::string> train_subjects,
                                           std::size_t k);

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

// Stratified on y1. Fold sizes: val = round(n * val), test = round(n * test),
// train takes the rest.
SplitAssignment stratified_split(std::span<const int> y1, const SplitFractions& fractions, std::uint64_t seed);

struct AuditInput {
  std::array<std::vector<std::string>, kModalityCount> columns;
  std::vector<std::string> variance_fit_subjects;
  std::vector<std::string> train_subjects;
};

struct AuditReport {
  bool passed = true;
  std::vector<std::string> offending_columns;
  std::vector<std::string> findings;
};

AuditReport leakage_audit(const AuditInput& input);

}  // namespace mmfuse
