#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "mmfuse/error.hpp"
#include "mmfuse/metrics.hpp"
#include "support.hpp"

using namespace mmfuse;
using mmfuse::testing::pair_count_auroc;

TEST_CASE("auroc examples") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(auroc(s, y) == 1.0);
  const std::vector<double> r{0.2, 0.9};
  const std::vector<int> ry{1, 0};
  CHECK(auroc(r, ry) == 0.0);

  const std::vector<double> tie{0.3, 0.5, 0.5, 0.1, 0.9, 0.7, 0.2, 0.6};
  const std::vector<int> ty{1, 0, 1, 0, 1, 0, 0, 1};
  CHECK(auroc(tie, ty) == pair_count_auroc(tie, ty));
  CHECK(auroc(tie, ty) == 11.5 / 16.0);

  const std::vector<int> one{1, 1};
  CHECK_THROWS_AS(auroc(r, one), UndefinedAurocError);
  CHECK_FALSE(try_auroc(r, one));
}

TEST_CASE("auroc equals the pair-counting oracle on random instances") {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(19);
    std::vector<double> s(n);
    std::vector<int> y(n);
    do {
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = double(rng.below(6)) / 5.0;  // coarse grid forces ties
        y[i] = int(rng.below(2));
      }
    } while (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0);
    CHECK(std::abs(auroc(s, y) - pair_count_auroc(s, y)) <= 1e-12);
  }
}

TEST_CASE("percentile interpolates like numpy") {
  CHECK(percentile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(percentile({5, 1, 3}, 0.0) == 1.0);
  CHECK(percentile({5, 1, 3}, 1.0) == 5.0);
  CHECK(percentile({0, 10}, 0.025) == doctest::Approx(0.25));
  CHECK_THROWS(percentile({}, 0.5));
}

TEST_CASE("bootstrap with identical scores") {
  const std::vector<double> s(10, 0.4);
  const std::vector<int> y{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  const BootstrapCi ci = bootstrap_ci(s, y, 200, 3);
  CHECK(ci.lo == 0.5);
  CHECK(ci.hi == 0.5);
  CHECK(ci.kept + ci.discarded == 200);
}

TEST_CASE("bootstrap replays from an independent enumeration") {
  const std::vector<double> s{0.2, 0.7, 0.4};
  const std::vector<int> y{0, 1, 1};
  const std::size_t resamples = 10;
  const std::uint64_t seed = 42;
  const BootstrapCi ci = bootstrap_ci(s, y, resamples, seed);

  std::mt19937_64 engine(seed);
  std::vector<double> kept;
  std::size_t discarded = 0;
  for (std::size_t b = 0; b < resamples; ++b) {
    std::vector<double> rs;
    std::vector<int> ry;
    for (int i = 0; i < 3; ++i) {
      const auto k = std::uniform_int_distribution<std::size_t>(0, 2)(engine);
      rs.push_back(s[k]);
      ry.push_back(y[k]);
    }
    const auto pos = std::count(ry.begin(), ry.end(), 1);
    if (pos == 0 || pos == 3) {
      ++discarded;
      continue;
    }
    kept.push_back(pair_count_auroc(rs, ry));
  }
  std::sort(kept.begin(), kept.end());
  auto pct = [&](double q) {
    const double pos = q * double(kept.size() - 1);
    const auto i = std::size_t(pos);
    const auto j = std::min(i + 1, kept.size() - 1);
    return kept[i] + (kept[j] - kept[i]) * (pos - double(i));
  };
  CHECK(ci.kept == kept.size());
  CHECK(ci.discarded == discarded);
  CHECK(ci.lo == doctest::Approx(pct(0.025)).epsilon(1e-15));
  CHECK(ci.hi == doctest::Approx(pct(0.975)).epsilon(1e-15));
}

TEST_CASE("bootstrap interval narrows with more subjects") {
  Rng rng(8);
  auto width = [&](std::size_t n) {
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = int(i % 2);
      s[i] = rng.normal() + 0.8 * y[i];
    }
    const BootstrapCi ci = bootstrap_ci(s, y, 2000, 5);
    return ci.hi - ci.lo;
  };
  CHECK(width(200) < width(20));
}

TEST_CASE("bootstrap is deterministic given the seed") {
  const std::vector<double> s{0.1, 0.5, 0.3, 0.9, 0.2, 0.6};
  const std::vector<int> y{0, 1, 0, 1, 1, 0};
  const BootstrapCi a = bootstrap_ci(s, y, 300, 7);
  const BootstrapCi b = bootstrap_ci(s, y, 300, 7);
  CHECK(a.samples == b.samples);
  CHECK(a.lo <= a.hi);
}

TEST_CASE("spearman") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{10, 20, 30, 40, 50};
  const std::vector<double> c{5, 4, 3, 2, 1};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(spearman(a, c) == doctest::Approx(-1.0));
  const std::vector<double> tied{1, 1, 2, 3, 3};
  CHECK(spearman(tied, tied) == doctest::Approx(1.0));
}
