#include "mmfuse/dataset.hpp"

#include <string>

#include "mmfuse/error.hpp"

namespace mmfuse {

void Dataset::validate() const {
  const std::size_t n = size();
  if (presence.size() != n || y1.size() != n || y2.size() != n) throw DataError("dataset: per-subject vectors disagree in length");
  if (metadata.rows() != n || metadata.cols() != 2) throw DataError("dataset: metadata must be n x 2");
  if (!cohort.empty() && cohort.size() != n) throw DataError("dataset: cohort vector length mismatch");
  const std::size_t dim = embeddings[0].cols();
  for (Modality m : kAllModalities) {
    const Tensor2& e = embeddings[index(m)];
    if (e.rows() != n || e.cols() != dim) {
      throw DataError("dataset: embedding table '" + std::string(name(m)) + "' has shape " + std::to_string(e.rows()) +
                      "x" + std::to_string(e.cols()));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (presence[i].none()) throw DataError("dataset: subject " + subject_ids[i] + " has no modality");
    if (y1[i] != 0 && y1[i] != 1) throw DataError("dataset: subject " + subject_ids[i] + " has invalid y1");
    if (y2[i] != 0 && y2[i] != 1 && y2[i] != kMissingLabel) {
      throw DataError("dataset: subject " + subject_ids[i] + " has invalid y2");
    }
  }
}

std::vector<std::size_t> SplitAssignment::rows(Fold f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < folds.size(); ++i)
    if (folds[i] == f) out.push_back(i);
  return out;
}

std::vector<std::size_t> SplitAssignment::labeled_rows(Fold f, const std::vector<int>& y2) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < folds.size(); ++i)
    if (folds[i] == f && y2.at(i) != kMissingLabel) out.push_back(i);
  return out;
}

}  // namespace mmfuse
