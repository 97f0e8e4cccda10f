#include "mmfuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "mmfuse/error.hpp"
#include "mmfuse/features.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

void SyntheticSpec::validate() const {
  if (n < 8) throw ConfigError("synthetic spec: n must be at least 8");
  if (embed_dim < 2) throw ConfigError("synthetic spec: embed_dim must be at least 2");
  if (cohorts == 0 || cohorts > n) throw ConfigError("synthetic spec: cohorts must lie in [1, n]");
  for (double r : missing_rates) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("synthetic spec: missing rates must lie in [0, 1)");
  }
  if (!(label_spearman >= -1.0 && label_spearman <= 1.0)) {
    throw ConfigError("synthetic spec: label_spearman must lie in [-1, 1]");
  }
  if (!(unlabeled_fraction >= 0.0 && unlabeled_fraction < 1.0)) {
    throw ConfigError("synthetic spec: unlabeled_fraction must lie in [0, 1)");
  }
  if (!(signal_strength >= 0.0) || !(background_strength >= 0.0)) {
    throw ConfigError("synthetic spec: signal strengths must be non-negative");
  }
  if (peak_modality == durability_modality) {
    throw ConfigError("synthetic spec: the two tasks need different planted modalities");
  }
}

namespace {

std::vector<double> standardized(std::vector<double> v) {
  const double n = double(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / n);
  for (double& x : v) x = sd > 0.0 ? (x - mean) / sd : 0.0;
  return v;
}

std::vector<double> unit_direction(std::size_t dim, Rng& rng, const std::vector<double>* orthogonal_to) {
  std::vector<double> d(dim);
  for (double& x : d) x = rng.normal();
  if (orthogonal_to != nullptr) {
    const double proj = std::inner_product(d.begin(), d.end(), orthogonal_to->begin(), 0.0);
    for (std::size_t k = 0; k < dim; ++k) d[k] -= proj * (*orthogonal_to)[k];
  }
  const double norm = std::sqrt(std::inner_product(d.begin(), d.end(), d.begin(), 0.0));
  for (double& x : d) x /= norm;
  return d;
}

// Cohort-major order: cohorts in the given order, subjects shuffled within each.
std::vector<std::size_t> cohort_order(const std::vector<int>& cohort, const std::vector<int>& cohort_sequence,
                                      Rng& rng) {
  std::vector<std::size_t> order;
  for (int c : cohort_sequence) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < cohort.size(); ++i)
      if (cohort[i] == c) members.push_back(i);
    rng.shuffle(std::span<std::size_t>(members));
    order.insert(order.end(), members.begin(), members.end());
  }
  return order;
}

}  // namespace

SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n;
  const std::size_t dim = spec.embed_dim;
  Rng rng(spec.seed);

  SyntheticCohort out;
  Dataset& d = out.data;
  d.subject_ids.resize(n);
  d.cohort.resize(n);
  constexpr int kFirstCohortYear = 2020;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "S%04zu", i + 1);
    d.subject_ids[i] = buf;
    d.cohort[i] = kFirstCohortYear + int(i * spec.cohorts / n);
  }

  std::vector<double> u1(n), noise(n);
  for (std::size_t i = 0; i < n; ++i) u1[i] = rng.normal();
  for (std::size_t i = 0; i < n; ++i) noise[i] = rng.normal();

  std::vector<int> latest_first(spec.cohorts);
  for (std::size_t c = 0; c < spec.cohorts; ++c) latest_first[c] = kFirstCohortYear + int(spec.cohorts - 1 - c);
  const auto unlabeled_order = cohort_order(d.cohort, latest_first, rng);
  const auto n_unlabeled = std::size_t(std::lround(spec.unlabeled_fraction * double(n)));
  std::vector<bool> labeled(n, true);
  for (std::size_t k = 0; k < n_unlabeled; ++k) labeled[unlabeled_order[k]] = false;

  std::vector<double> u1_lab, e_lab;
  for (std::size_t i = 0; i < n; ++i) {
    if (!labeled[i]) continue;
    u1_lab.push_back(u1[i]);
    e_lab.push_back(noise[i]);
  }
  auto mix = [](double c, double a, double e) { return c * a + std::sqrt(std::max(0.0, 1.0 - c * c)) * e; };
  auto realized = [&](double c) {
    std::vector<double> u2(u1_lab.size());
    for (std::size_t k = 0; k < u2.size(); ++k) u2[k] = mix(c, u1_lab[k], e_lab[k]);
    return spearman(u1_lab, u2);
  };
  double coupling = spec.label_spearman;
  if (u1_lab.size() >= 3) {
    double lo = -1.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (realized(mid) < spec.label_spearman ? lo : hi) = mid;
    }
    coupling = 0.5 * (lo + hi);
    out.realized_spearman = realized(coupling);
  }
  std::vector<double> u2(n);
  for (std::size_t i = 0; i < n; ++i) u2[i] = mix(coupling, u1[i], noise[i]);

  d.y1.assign(n, 0);
  d.y2.assign(n, kMissingLabel);
  out.fc_peak = u1;
  out.fc_retention.assign(n, std::nullopt);
  const double peak_cut = median(u1);
  std::vector<double> u2_lab;
  for (std::size_t i = 0; i < n; ++i)
    if (labeled[i]) u2_lab.push_back(u2[i]);
  const double retention_cut = u2_lab.empty() ? 0.0 : median(u2_lab);
  for (std::size_t i = 0; i < n; ++i) {
    d.y1[i] = u1[i] > peak_cut ? 1 : 0;
    if (labeled[i]) {
      d.y2[i] = u2[i] > retention_cut ? 1 : 0;
      out.fc_retention[i] = u2[i];
    }
  }

  const auto t1 = standardized(u1);
  const auto t2 = standardized(u2);
  for (Modality m : kAllModalities) {
    const auto dir1 = unit_direction(dim, rng, nullptr);
    const auto dir2 = unit_direction(dim, rng, &dir1);
    const double a1 = m == spec.peak_modality ? spec.signal_strength : spec.background_strength;
    const double a2 = m == spec.durability_modality ? spec.signal_strength : spec.background_strength;
    Tensor2& z = d.embeddings[index(m)];
    z = Tensor2(n, dim);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < dim; ++k) z(i, k) = rng.normal() + a1 * t1[i] * dir1[k] + a2 * t2[i] * dir2[k];
  }

  d.presence.assign(n, full_mask());
  std::array<std::size_t, kModalityCount> missing{};
  std::size_t available = 0;
  for (Modality m : kAllModalities) {
    missing[index(m)] = std::size_t(std::lround(spec.missing_rates[index(m)] * double(n)));
    available += n - missing[index(m)];
  }
  if (available < n) throw ConfigError("synthetic spec infeasible: missing rates leave some subject without data");
  for (Modality m : kAllModalities) {
    const auto order = cohort_order(d.cohort, latest_first, rng);
    for (std::size_t k = 0; k < missing[index(m)]; ++k) d.presence[order[k]].reset(index(m));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (d.presence[i].any()) continue;
    bool repaired = false;
    for (Modality m : kAllModalities) {
      for (std::size_t j = 0; j < n && !repaired; ++j) {
        if (d.presence[j].test(index(m)) && d.presence[j].count() >= 2) {
          d.presence[j].reset(index(m));
          d.presence[i].set(index(m));
          repaired = true;
        }
      }
      if (repaired) break;
    }
    if (!repaired) throw ConfigError("synthetic spec infeasible: cannot give every subject a modality");
  }

  d.metadata = Tensor2(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    d.metadata(i, 0) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    d.metadata(i, 1) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  d.validate();
  return out;
}

}  // namespace mmfuse
