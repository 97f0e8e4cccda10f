#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/modality.hpp"

namespace mmfuse {

struct SyntheticSpec {
  std::size_t n = 158;
  std::size_t embed_dim = 1536;
  std::array<double, kModalityCount> missing_rates{0.0, 0.386, 0.278, 0.127};
  Modality peak_modality = Modality::cytokine;
  Modality durability_modality = Modality::antibody;
  double signal_strength = 10.0;     // planted trait scale in the planted modality
  double background_strength = 2.5;  // weaker copy of both traits in every modality
  double label_spearman = -0.58;     // target rank correlation of the two latent traits
  double unlabeled_fraction = 62.0 / 158.0;
  std::size_t cohorts = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticCohort {
  Dataset data;
  std::vector<double> fc_peak;
  std::vector<std::optional<double>> fc_retention;  // empty where y2 is withheld
  double realized_spearman = 0.0;                   // over subjects with y2
};

// Latent traits u1, u2 with u2 = c u1 + sqrt(1 - c^2) e, c tuned by bisection
// so the rank correlation over labeled subjects hits the target. Labels are
// median splits. Each modality's embedding is unit noise plus the traits along
// fixed random unit directions. Missingness removes exactly
// round(rate * n) subjects per modality, latest cohorts first (shuffled within a
// cohort); subjects left with no modality are repaired by swapping. The latest
// cohorts also lose y2 first.
SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec);

}  // namespace mmfuse
