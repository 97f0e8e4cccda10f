#include "mmfuse/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace fs = std::filesystem;

namespace {

std::string where(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line); }

std::vector<std::string> split_line(const std::string& line, const fs::path& path, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) throw DataError(where(path, line_no) + ": unterminated quoted field");
  fields.push_back(std::move(field));
  return fields;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::size_t require_column(const CsvTable& t, const std::string& name) {
  auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) throw DataError(t.path.string() + ": missing column '" + name + "'");
  return std::size_t(it - t.header.begin());
}

int parse_label(const CsvTable& t, std::size_t row, std::size_t col, bool allow_missing) {
  const std::string& s = t.rows[row][col];
  if (s == "0") return 0;
  if (s == "1") return 1;
  if (allow_missing && (s == "-1" || s.empty())) return kMissingLabel;
  throw DataError(where(t.path, t.lines[row]) + ", column " + std::to_string(col + 1) + ": invalid label '" + s + "'");
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::string join(const std::vector<std::string>& ids, std::size_t limit = 20) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < limit; ++i) out += (i ? ", " : "") + ids[i];
  if (ids.size() > limit) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

}  // namespace

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  CsvTable t;
  t.path = path;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_line(line, path, line_no);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw DataError(where(path, line_no) + ": expected " + std::to_string(t.header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.lines.push_back(line_no);
  }
  if (!have_header) throw DataError(path.string() + ": empty file");
  return t;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  auto emit = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << quote_if_needed(fields[i]);
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  if (!out) throw DataError("failed writing " + path.string());
}

std::string format_double(double value) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

double parse_number(std::string_view text, const CsvTable& table, std::size_t row, std::size_t column) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [end, ec] = std::from_chars(first, last, value);
  const std::string context = where(table.path, table.lines[row]) + ", column " + std::to_string(column + 1) +
                              " ('" + table.header[column] + "')";
  if (ec != std::errc{} || end != last || text.empty()) {
    throw DataError(context + ": not a number: '" + std::string(text) + "'");
  }
  if (!std::isfinite(value)) throw DataError(context + ": non-finite value '" + std::string(text) + "'");
  return value;
}

FeatureTable read_feature_table(const fs::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header[0] != "subject_id") {
    throw DataError(path.string() + ": first column must be subject_id");
  }
  FeatureTable out;
  out.columns.assign(t.header.begin() + 1, t.header.end());
  std::set<std::string> seen;
  std::vector<double> values;
  values.reserve(t.rows.size() * out.columns.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& id = t.rows[r][0];
    if (id.empty()) throw DataError(where(path, t.lines[r]) + ": empty subject_id");
    if (!seen.insert(id).second) throw DataError(where(path, t.lines[r]) + ": duplicate subject_id " + id);
    out.subject_ids.push_back(id);
    for (std::size_t c = 1; c < t.header.size(); ++c) values.push_back(parse_number(t.rows[r][c], t, r, c));
  }
  out.values = Tensor2(out.subject_ids.size(), out.columns.size(), values);
  return out;
}

void write_feature_table(const fs::path& path, const FeatureTable& table) {
  std::vector<std::string> header{"subject_id"};
  header.insert(header.end(), table.columns.begin(), table.columns.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t r = 0; r < table.subject_ids.size(); ++r) {
    std::vector<std::string> row{table.subject_ids[r]};
    for (double v : table.values.row(r)) row.push_back(format_double(v));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

std::map<std::string, SubjectInfo> read_subjects(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const auto c_id = require_column(t, "subject_id");
  const auto c_year = require_column(t, "cohort_year");
  const auto c_vac = require_column(t, "infancy_vac");
  const auto c_sex = require_column(t, "sex");
  std::map<std::string, SubjectInfo> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    SubjectInfo info;
    info.cohort_year = int(parse_number(row[c_year], t, r, c_year));
    if (row[c_vac] == "wP") info.whole_cell = true;
    else if (row[c_vac] != "aP") throw DataError(where(path, t.lines[r]) + ": infancy_vac must be wP or aP");
    std::string sex = row[c_sex];
    std::transform(sex.begin(), sex.end(), sex.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    if (sex == "male" || sex == "m") info.male = true;
    else if (sex != "female" && sex != "f") throw DataError(where(path, t.lines[r]) + ": sex must be Male or Female");
    if (!out.emplace(row[c_id], info).second) {
      throw DataError(where(path, t.lines[r]) + ": duplicate subject_id " + row[c_id]);
    }
  }
  return out;
}

void write_subjects(const fs::path& path, const std::map<std::string, SubjectInfo>& subjects) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [id, s] : subjects) {
    rows.push_back({id, std::to_string(s.cohort_year), s.whole_cell ? "wP" : "aP", s.male ? "Male" : "Female"});
  }
  write_csv(path, {"subject_id", "cohort_year", "infancy_vac", "sex"}, rows);
}

RawModalityTable read_raw_modality(const fs::path& dir, Modality m) {
  RawModalityTable raw;
  raw.modality = m;
  raw.scale = modality_scale(m);
  const std::regex pattern(std::string(name(m)) + "_d([0-9]+)\\.csv");
  if (!fs::is_directory(dir)) throw DataError("raw directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::smatch match;
    const std::string file = path.filename().string();
    if (!std::regex_match(file, match, pattern)) continue;
    raw.timepoints.emplace(std::stoi(match[1].str()), read_feature_table(path));
  }
  return raw;
}

std::string fold_name(Fold f) {
  switch (f) {
    case Fold::train: return "train";
    case Fold::val: return "val";
    case Fold::test: return "test";
  }
  return "?";
}

Dataset load_dataset(const fs::path& dir) {
  const CsvTable labels = read_csv(dir / "labels.csv");
  const auto c_id = require_column(labels, "subject_id");
  const auto c_y1 = require_column(labels, "y1");
  const auto c_y2 = require_column(labels, "y2");

  std::map<std::string, std::pair<int, int>> by_id;
  for (std::size_t r = 0; r < labels.rows.size(); ++r) {
    const std::string& id = labels.rows[r][c_id];
    const int y1 = parse_label(labels, r, c_y1, false);
    const int y2 = parse_label(labels, r, c_y2, true);
    if (!by_id.emplace(id, std::make_pair(y1, y2)).second) {
      throw DataError(where(labels.path, labels.lines[r]) + ": duplicate subject_id " + id);
    }
  }
  if (by_id.empty()) throw DataError(labels.path.string() + ": no subjects");

  Dataset d;
  std::map<std::string, std::size_t> row_of;
  for (const auto& [id, y] : by_id) {
    row_of.emplace(id, d.subject_ids.size());
    d.subject_ids.push_back(id);
    d.y1.push_back(y.first);
    d.y2.push_back(y.second);
  }
  const std::size_t n = d.size();

  const auto subjects = read_subjects(dir / "subjects.csv");
  std::vector<std::string> orphans;
  std::vector<std::string> unknown;
  for (const auto& [id, info] : subjects)
    if (!row_of.contains(id)) orphans.push_back(id);
  d.metadata = Tensor2(n, 2);
  d.cohort.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = subjects.find(d.subject_ids[i]);
    if (it == subjects.end()) {
      unknown.push_back(d.subject_ids[i]);
      continue;
    }
    d.metadata(i, 0) = it->second.whole_cell ? 1.0 : 0.0;
    d.metadata(i, 1) = it->second.male ? 1.0 : 0.0;
    d.cohort[i] = it->second.cohort_year;
  }
  if (!unknown.empty()) throw DataError("labeled subjects missing from subjects.csv: " + join(unknown));

  d.presence.assign(n, ModalityMask{});
  std::size_t dim = 0;
  for (Modality m : kAllModalities) {
    const fs::path path = dir / "embeddings" / (std::string(name(m)) + ".csv");
    const FeatureTable t = read_feature_table(path);
    for (std::size_t k = 0; k < t.columns.size(); ++k) {
      if (t.columns[k] != "e" + std::to_string(k)) {
        throw DataError(path.string() + ": column " + std::to_string(k + 2) + " must be named e" + std::to_string(k));
      }
    }
    if (t.columns.empty()) throw DataError(path.string() + ": no embedding columns");
    if (dim == 0) dim = t.columns.size();
    if (t.columns.size() != dim) {
      throw DataError(path.string() + ": embedding width " + std::to_string(t.columns.size()) + " differs from " +
                      std::to_string(dim));
    }
    Tensor2& z = d.embeddings[index(m)];
    z = Tensor2(n, dim);
    for (std::size_t r = 0; r < t.subject_ids.size(); ++r) {
      auto it = row_of.find(t.subject_ids[r]);
      if (it == row_of.end()) {
        orphans.push_back(t.subject_ids[r] + " (" + std::string(name(m)) + ")");
        continue;
      }
      d.presence[it->second].set(index(m));
      std::copy(t.values.row(r).begin(), t.values.row(r).end(), z.row(it->second).begin());
    }
  }
  if (!orphans.empty()) throw DataError("subjects without a label row: " + join(orphans));
  std::vector<std::string> empty;
  for (std::size_t i = 0; i < n; ++i)
    if (d.presence[i].none()) empty.push_back(d.subject_ids[i]);
  if (!empty.empty()) throw DataError("labeled subjects with no modality: " + join(empty));
  d.validate();
  return d;
}

void save_dataset(const fs::path& dir, const Dataset& data, const std::vector<double>* fc_peak,
                  const std::vector<std::optional<double>>* fc_retention) {
  data.validate();
  const std::size_t n = data.size();
  std::vector<std::string> header{"subject_id", "y1", "y2"};
  if (fc_peak) header.push_back("fc_peak");
  if (fc_retention) header.push_back("fc_retention");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> row{data.subject_ids[i], std::to_string(data.y1[i]), std::to_string(data.y2[i])};
    if (fc_peak) row.push_back(format_double((*fc_peak)[i]));
    if (fc_retention) row.push_back((*fc_retention)[i] ? format_double(*(*fc_retention)[i]) : "");
    rows.push_back(std::move(row));
  }
  write_csv(dir / "labels.csv", header, rows);

  std::map<std::string, SubjectInfo> subjects;
  for (std::size_t i = 0; i < n; ++i) {
    subjects[data.subject_ids[i]] = {data.cohort[i], data.metadata(i, 0) != 0.0, data.metadata(i, 1) != 0.0};
  }
  write_subjects(dir / "subjects.csv", subjects);

  for (Modality m : kAllModalities) {
    FeatureTable t;
    for (std::size_t k = 0; k < data.embed_dim(); ++k) t.columns.push_back("e" + std::to_string(k));
    std::vector<std::size_t> rows_present;
    for (std::size_t i = 0; i < n; ++i) {
      if (!data.presence[i].test(index(m))) continue;
      t.subject_ids.push_back(data.subject_ids[i]);
      rows_present.push_back(i);
    }
    t.values = gather_rows(data.embeddings[index(m)], rows_present);
    write_feature_table(dir / "embeddings" / (std::string(name(m)) + ".csv"), t);
  }
}

std::optional<SplitAssignment> read_split(const fs::path& path, const Dataset& data) {
  if (!fs::exists(path)) return std::nullopt;
  const CsvTable t = read_csv(path);
  const auto c_id = require_column(t, "subject_id");
  const auto c_fold = require_column(t, "fold");
  std::map<std::string, Fold> folds;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& f = t.rows[r][c_fold];
    Fold fold;
    if (f == "train") fold = Fold::train;
    else if (f == "val") fold = Fold::val;
    else if (f == "test") fold = Fold::test;
    else throw DataError(where(path, t.lines[r]) + ": fold must be train, val or test");
    folds[t.rows[r][c_id]] = fold;
  }
  SplitAssignment split;
  std::vector<std::string> missing;
  for (const auto& id : data.subject_ids) {
    auto it = folds.find(id);
    if (it == folds.end()) {
      missing.push_back(id);
      split.folds.push_back(Fold::train);
    } else {
      split.folds.push_back(it->second);
    }
  }
  if (!missing.empty()) throw DataError(path.string() + ": no fold for " + join(missing));
  return split;
}

void write_split(const fs::path& path, const std::vector<std::string>& subject_ids, const SplitAssignment& split) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < subject_ids.size(); ++i) rows.push_back({subject_ids[i], fold_name(split.folds[i])});
  write_csv(path, {"subject_id", "fold"}, rows);
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace mmfuse
