#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mcqlab/errors.hpp"
#include "mcqlab/quadrature.hpp"

using namespace mcqlab;

namespace {

// int exp(-x^2) x^(2m) dx = Gamma(m + 1/2).
double even_moment(int m) { return std::tgamma(m + 0.5); }

}  // namespace

TEST_CASE("Gauss-Hermite rules integrate polynomials exactly") {
  for (int n : {1, 2, 3, 5, 9, 15, 25, 40}) {
    const auto& rule = gauss_hermite(n);
    REQUIRE(rule.order() == n);
    for (int m = 0; 2 * m <= 2 * n - 1 && m <= 12; ++m) {
      double even = 0.0, odd = 0.0;
      for (int k = 0; k < n; ++k) {
        const double x = rule.nodes[static_cast<std::size_t>(k)], w = rule.weights[static_cast<std::size_t>(k)];
        even += w * std::pow(x, 2 * m);
        odd += w * std::pow(x, 2 * m + 1);
      }
      CHECK(even == doctest::Approx(even_moment(m)).epsilon(1e-11));
      CHECK(std::abs(odd) < 1e-10 * std::max(1.0, even_moment(m)));
    }
  }
}

TEST_CASE("nodes are sorted and symmetric, weights positive") {
  for (int n : {4, 7, 20, 100, 200}) {
    const auto& rule = gauss_hermite(n);
    for (int k = 0; k < n; ++k) {
      const auto i = static_cast<std::size_t>(k), j = static_cast<std::size_t>(n - 1 - k);
      CHECK(rule.weights[i] > 0.0);
      CHECK(rule.nodes[i] == -rule.nodes[j]);
      CHECK(rule.weights[i] == rule.weights[j]);
      if (k > 0) CHECK(rule.nodes[i] > rule.nodes[i - 1]);
    }
  }
}

TEST_CASE("a smooth integrand converges with the order") {
  // int exp(-x^2) cos(x) dx = sqrt(pi) exp(-1/4)
  const double exact = std::sqrt(std::numbers::pi) * std::exp(-0.25);
  const auto& rule = gauss_hermite(20);
  double acc = 0.0;
  for (int k = 0; k < 20; ++k) acc += rule.weights[static_cast<std::size_t>(k)] * std::cos(rule.nodes[static_cast<std::size_t>(k)]);
  CHECK(acc == doctest::Approx(exact).epsilon(1e-14));
}

TEST_CASE("invalid order") {
  CHECK_THROWS_AS(gauss_hermite(0), ConfigError);
  CHECK_THROWS_AS(gauss_hermite(201), ConfigError);
  CHECK(&gauss_hermite(9) == &gauss_hermite(9));
}
