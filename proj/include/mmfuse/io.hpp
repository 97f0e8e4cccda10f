#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/features.hpp"

namespace mmfuse {

// Comma-delimited table with a header row. Fields may be double-quoted.
struct CsvTable {
  std::filesystem::path path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Shortest decimal text that reads back to the same double.
std::string format_double(double value);
// Throws DataError with file, line and column on malformed or non-finite text.
double parse_number(std::string_view text, const CsvTable& table, std::size_t row, std::size_t column);

// First column subject_id, remaining columns numeric.
FeatureTable read_feature_table(const std::filesystem::path& path);
void write_feature_table(const std::filesystem::path& path, const FeatureTable& table);

struct SubjectInfo {
  int cohort_year = 0;
  bool whole_cell = false;  // infancy_vac == wP
  bool male = false;
};
// subject_id, cohort_year, infancy_vac (wP|aP), sex (Male|Female)
std::map<std::string, SubjectInfo> read_subjects(const std::filesystem::path& path);
void write_subjects(const std::filesystem::path& path, const std::map<std::string, SubjectInfo>& subjects);

// Raw per-timepoint tables found as <dir>/<modality>_d<day>.csv.
RawModalityTable read_raw_modality(const std::filesystem::path& dir, Modality m);

// Dataset directory layout:
//   labels.csv                subject_id, y1, y2 (-1 when missing) [, fc_peak, fc_retention]
//   subjects.csv              as read_subjects
//   embeddings/<modality>.csv subject_id, e0 .. e(D-1); a missing row means the modality is absent
//   split.csv (optional)      subject_id, fold (train|val|test)
// Subjects are aligned by id; ids present in an embedding or subject file but
// not in labels.csv, or labeled subjects without any modality, are listed in
// the DataError.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& data,
                  const std::vector<double>* fc_peak = nullptr,
                  const std::vector<std::optional<double>>* fc_retention = nullptr);

std::optional<SplitAssignment> read_split(const std::filesystem::path& path, const Dataset& data);
void write_split(const std::filesystem::path& path, const std::vector<std::string>& subject_ids,
                 const SplitAssignment& split);

std::string fold_name(Fold f);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace mmfuse
