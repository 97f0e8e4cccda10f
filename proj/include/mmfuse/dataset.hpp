#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/modality.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

inline constexpr int kMissingLabel = -1;

// Model-ready cohort: one row per subject in every table, ordered by subject id.
// Embedding rows of absent modalities are never read by the model.
struct Dataset {
  std::vector<std::string> subject_ids;
  std::array<Tensor2, kModalityCount> embeddings;
  std::vector<ModalityMask> presence;
  Tensor2 metadata;  // n x 2: infancy_vac (wP = 1), sex (male = 1)
  std::vector<int> y1;
  std::vector<int> y2;  // kMissingLabel when the durability label is absent
  std::vector<int> cohort;

  std::size_t size() const noexcept { return subject_ids.size(); }
  std::size_t embed_dim() const noexcept { return embeddings[0].cols(); }
  // Throws DataError on inconsistent shapes, label values, or subjects without
  // any modality.
  void validate() const;
};

enum class Fold : unsigned char { train = 0, val = 1, test = 2 };

struct SplitAssignment {
  std::vector<Fold> folds;  // parallel to Dataset rows
  std::uint64_t seed = 0;

  std::vector<std::size_t> rows(Fold f) const;
  // Rows of fold f whose durability label is present.
  std::vector<std::size_t> labeled_rows(Fold f, const std::vector<int>& y2) const;
};

}  // namespace mmfuse
