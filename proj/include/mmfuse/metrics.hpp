#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace mmfuse {

// Mann-Whitney AUROC with midranks: P(pos > neg) + 0.5 P(tie). Throws
// UndefinedAurocError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);
std::optional<double> try_auroc(std::span<const double> scores, std::span<const int> labels);

// Linear interpolation between order statistics at q * (n - 1), q in [0, 1].
double percentile(std::vector<double> values, double q);

struct BootstrapCi {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t kept = 0;
  std::size_t discarded = 0;
  bool excludes_point = false;  // flagged, not an error
  std::vector<double> samples;
};

// Percentile-method interval over `resamples` draws of n indices with
// replacement; resamples containing a single class are discarded. Draw
// sequence: Rng(seed), then for each resample n calls of Rng::below(n).
BootstrapCi bootstrap_ci(std::span<const double> scores, std::span<const int> labels, std::size_t resamples,
                         std::uint64_t seed, double level = 0.95);

double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace mmfuse
