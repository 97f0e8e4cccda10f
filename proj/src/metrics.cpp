#include "mmfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mmfuse/error.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> try_auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ConfigError("auroc: scores and labels differ in length");
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  for (int y : labels) {
    if (y == 1) ++n_pos;
    else if (y == 0) ++n_neg;
    else throw ConfigError("auroc: labels must be 0 or 1");
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const auto ranks = midranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) rank_sum += ranks[i];
  const double u = rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
  return u / (double(n_pos) * double(n_neg));
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  auto value = try_auroc(scores, labels);
  if (!value) throw UndefinedAurocError("auroc undefined: only one class among " + std::to_string(labels.size()) + " labels");
  return *value;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * double(values.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - double(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

BootstrapCi bootstrap_ci(std::span<const double> scores, std::span<const int> labels, std::size_t resamples,
                         std::uint64_t seed, double level) {
  const double point = auroc(scores, labels);
  const std::size_t n = scores.size();
  Rng rng(seed);
  BootstrapCi ci;
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t b = 0; b < resamples; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pick = rng.below(n);
      s[i] = scores[pick];
      y[i] = labels[pick];
    }
    if (auto value = try_auroc(s, y)) {
      ci.samples.push_back(*value);
    } else {
      ++ci.discarded;
    }
  }
  ci.kept = ci.samples.size();
  if (ci.kept == 0) throw DataError("bootstrap_ci: every resample was single-class");
  const double tail = (1.0 - level) / 2.0;
  ci.lo = percentile(ci.samples, tail);
  ci.hi = percentile(ci.samples, 1.0 - tail);
  ci.excludes_point = point < ci.lo || point > ci.hi;
  return ci;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ConfigError("spearman: need two equal-length samples");
  const auto ra = midranks(a);
  const auto rb = midranks(b);
  const double n = double(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace mmfuse
