#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mmfuse/autodiff.hpp"
#include "mmfuse/error.hpp"
#include "support.hpp"

using namespace mmfuse;
using mmfuse::testing::random_tensor;

namespace {

// erf by its Maclaurin series in long double.
long double series_erf(long double x) {
  long double term = x;
  long double total = x;
  for (int n = 1; n < 60; ++n) {
    term *= -x * x / n;
    total += term / (2 * n + 1);
  }
  return 2.0L / std::sqrt(std::numbers::pi_v<long double>) * total;
}

Tensor2 eval(const std::function<Var(Graph&)>& f) {
  Graph g;
  return g.value(f(g));
}

}  // namespace

TEST_CASE("linear forward values") {
  const Tensor2 id = Tensor2::identity(2);
  auto out = eval([&](Graph& g) { return linear(g, g.constant(id), g.constant(id), g.constant(Tensor2(1, 2))); });
  CHECK(out == id);

  out = eval([](Graph& g) {
    return linear(g, g.constant(Tensor2::from_rows({{1, 2}})), g.constant(Tensor2::from_rows({{1}, {1}})),
                  g.constant(Tensor2::from_rows({{0.5}})));
  });
  CHECK(out(0, 0) == doctest::Approx(3.5).epsilon(1e-15));
}

TEST_CASE("bias gradient of a summed linear map counts rows") {
  Graph g;
  Rng rng(1);
  const Var b = g.parameter(Tensor2(1, 3));
  const Var out = sum(g, linear(g, g.constant(random_tensor(4, 2, rng)), g.constant(random_tensor(2, 3, rng)), b));
  g.backward(out);
  const Tensor2 grad = g.gradient(b);
  for (double v : grad.values()) CHECK(v == 4.0);
}

TEST_CASE("linear rejects non-conforming shapes") {
  Graph g;
  CHECK_THROWS_AS(linear(g, g.constant(Tensor2(2, 3)), g.constant(Tensor2(2, 3)), g.constant(Tensor2(1, 3))),
                  ConfigError);
  CHECK_THROWS_AS(linear(g, g.constant(Tensor2(2, 3)), g.constant(Tensor2(3, 2)), g.constant(Tensor2(1, 3))),
                  ConfigError);
}

TEST_CASE("gelu values") {
  CHECK(gelu_value(0.0) == 0.0);
  CHECK(std::abs(gelu_value(10.0) - 10.0) < 1e-9);
  const long double phi1 = 0.5L * (1.0L + series_erf(1.0L / std::sqrt(2.0L)));
  CHECK(std::abs(gelu_value(1.0) - double(phi1)) < 1e-15);
  const auto out = eval([](Graph& g) { return gelu(g, g.constant(Tensor2::from_rows({{-1.0, 1.0}}))); });
  CHECK(std::abs(out(0, 1) - double(phi1)) < 1e-15);
  CHECK(std::abs(out(0, 0) + double(1.0L - phi1)) < 1e-15);
}

TEST_CASE("layer norm") {
  const Tensor2 ones(1, 4, 1.0);
  auto out = eval([&](Graph& g) {
    return layer_norm(g, g.constant(Tensor2(1, 4, 3.7)), g.constant(ones), g.constant(Tensor2(1, 4)));
  });
  for (double v : out.values()) CHECK(v == 0.0);

  out = eval([](Graph& g) {
    return layer_norm(g, g.constant(Tensor2::from_rows({{1, -1}})), g.constant(Tensor2(1, 2, 1.0)),
                      g.constant(Tensor2(1, 2)), 1e-300);
  });
  CHECK(out(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));

  Rng rng(5);
  const Tensor2 bias = random_tensor(1, 6, rng);
  out = eval([&](Graph& g) {
    return layer_norm(g, g.constant(random_tensor(3, 6, rng)), g.constant(Tensor2(1, 6, 1.3)), g.constant(bias));
  });
  double bias_mean = 0.0;
  for (double v : bias.values()) bias_mean += v / 6.0;
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0;
    for (double v : out.row(r)) mean += v / 6.0;
    CHECK(std::abs(mean - bias_mean) < 1e-10);
  }
}

TEST_CASE("l2 normalization") {
  auto out = eval([](Graph& g) { return l2_normalize_rows(g, g.constant(Tensor2::from_rows({{3, 4}}))); });
  CHECK(out(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(out(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  const Tensor2 unit = Tensor2::from_rows({{0.0, 1.0, 0.0}});
  CHECK(eval([&](Graph& g) { return l2_normalize_rows(g, g.constant(unit)); }) == unit);

  Rng rng(7);
  const Tensor2 x = random_tensor(5, 8, rng);
  Tensor2 scaled = x;
  for (double& v : scaled.values()) v *= 3.25;
  const auto a = eval([&](Graph& g) { return l2_normalize_rows(g, g.constant(x)); });
  const auto b = eval([&](Graph& g) { return l2_normalize_rows(g, g.constant(scaled)); });
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-15);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double n2 = 0.0;
    for (double v : a.row(r)) n2 += v * v;
    CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-12);
  }

  Graph g;
  CHECK_THROWS_AS(l2_normalize_rows(g, g.constant(Tensor2(2, 3))), DegenerateEmbeddingError);
}

TEST_CASE("masked softmax") {
  const std::vector<double> s1{5, -2, 0, 9};
  const std::vector<std::uint8_t> m1{1, 0, 0, 0};
  CHECK(masked_softmax(s1, m1) == std::vector<double>{1, 0, 0, 0});

  for (double c : {-700.0, 0.0, 3.3, 800.0}) {
    const std::vector<double> s{c, c};
    const std::vector<std::uint8_t> m{1, 1};
    const auto p = masked_softmax(s, m);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);
  }

  const std::vector<double> s3{0.0, std::log(3.0)};
  const std::vector<std::uint8_t> m3{1, 1};
  const auto p3 = masked_softmax(s3, m3);
  CHECK(std::abs(p3[0] - 0.25) < 1e-15);
  CHECK(std::abs(p3[1] - 0.75) < 1e-15);

  const std::vector<std::uint8_t> empty{0, 0, 0, 0};
  CHECK_THROWS_AS(masked_softmax(s1, empty), ConfigError);
}

TEST_CASE("masked softmax property: masked entries zero, rest sums to one") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(4);
    std::vector<std::uint8_t> m(4);
    for (auto& v : s) v = rng.uniform(-30, 30);
    do {
      for (auto& b : m) b = rng.bernoulli(0.5);
    } while (std::count(m.begin(), m.end(), 1) == 0);
    const auto p = masked_softmax(s, m);
    double total = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      if (m[i]) {
        CHECK(p[i] > 0.0);
        total += p[i];
      } else {
        CHECK(p[i] == 0.0);
      }
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("row softmax: empty rows follow the policy") {
  Graph g;
  const Var s = g.constant(Tensor2::from_rows({{1, 2}, {3, 4}}));
  const std::vector<std::uint8_t> mask{1, 1, 0, 0};
  CHECK_THROWS_AS(masked_softmax_rows(g, s, mask), ConfigError);
  const Tensor2 out = g.value(masked_softmax_rows(g, s, mask, EmptyRowPolicy::zero));
  CHECK(out(1, 0) == 0.0);
  CHECK(out(1, 1) == 0.0);
  CHECK(out(0, 0) + out(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("grad_check oracles") {
  Rng rng(3);
  const Tensor2 point = random_tensor(3, 4, rng);
  CHECK(grad_check([](Graph& g, Var x) { return sum(g, x); }, point) < 1e-10);
  CHECK(grad_check([](Graph& g, Var x) { return sum(g, gelu(g, x)); }, point, 1e-5) < 1e-6);
}

TEST_CASE("every registered op passes grad_check at 10 random points") {
  for (const auto& c : mmfuse::testing::registered_op_cases()) {
    Rng rng(derive_seed(99, std::hash<std::string>{}(c.name)));
    for (int k = 0; k < 10; ++k) {
      const Tensor2 point = random_tensor(c.rows, c.cols, rng);
      INFO(c.name << " point " << k);
      CHECK(grad_check(c.op, point, 1e-5) < 1e-4);
    }
  }
}

TEST_CASE("a node with two consumers accumulates both gradients") {
  // y = sum(x * 2) + sum(gelu(x)); dy/dx = 2 + gelu'(x)
  Graph g;
  const Tensor2 xv = Tensor2::from_rows({{0.3, -1.2}});
  const Var x = g.parameter(xv);
  const Var y = add(g, sum(g, scale(g, x, 2.0)), sum(g, gelu(g, x)));
  g.backward(y);
  const Tensor2 grad = g.gradient(x);
  for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(grad(0, i) - (2.0 + gelu_derivative(xv(0, i)))) < 1e-15);
}

TEST_CASE("backward on a non-scalar root is rejected") {
  Graph g;
  const Var x = g.parameter(Tensor2(2, 2, 1.0));
  CHECK_THROWS_AS(g.backward(gelu(g, x)), ConfigError);
}

TEST_CASE("constant leaves receive no gradient") {
  Graph g;
  const Var c = g.constant(Tensor2(1, 2, 1.0));
  const Var p = g.parameter(Tensor2(1, 2, 1.0));
  g.backward(sum(g, add(g, c, p)));
  CHECK_FALSE(g.requires_grad(c));
  for (double v : g.gradient(c).values()) CHECK(v == 0.0);
  for (double v : g.gradient(p).values()) CHECK(v == 1.0);
}

TEST_CASE("tensor ingestion rejects non-finite values") {
  Tensor2 t(1, 2);
  t(0, 1) = std::nan("");
  CHECK_THROWS_AS(t.require_finite("probe"), DataError);
  t(0, 1) = INFINITY;
  CHECK_FALSE(t.all_finite());
}
