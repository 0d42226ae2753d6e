#include "mcqlab/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "mcqlab/errors.hpp"

namespace mcqlab {

namespace {

// Orthonormal Hermite recurrence at x; returns (p_n(x), p_{n-1}(x)).
std::pair<double, double> hermite_pair(int n, double x) {
  double p_prev = 0.0;
  double p = 1.0 / std::pow(std::numbers::pi, 0.25);
  for (int j = 1; j <= n; ++j) {
    const double next = x * std::sqrt(2.0 / j) * p - std::sqrt((j - 1.0) / j) * p_prev;
    p_prev = p;
    p = next;
  }
  return {p, p_prev};
}

GaussHermiteRule compute_rule(int n) {
  // Golub-Welsch eigenvalues as starting points, then Newton on the
  // orthonormal recurrence for full-precision nodes and weights.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(k / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi, Eigen::EigenvaluesOnly);
  GaussHermiteRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    double x = n == 1 ? 0.0 : solver.eigenvalues()(k);
    double deriv = 0.0;
    for (int it = 0; it < 50; ++it) {
      auto [p, p_prev] = hermite_pair(n, x);
      deriv = std::sqrt(2.0 * n) * p_prev;
      const double step = p / deriv;
      x -= step;
      if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    auto [p, p_prev] = hermite_pair(n, x);
    (void)p;
    deriv = std::sqrt(2.0 * n) * p_prev;
    rule.nodes[static_cast<std::size_t>(k)] = x;
    rule.weights[static_cast<std::size_t>(k)] = 2.0 / (deriv * deriv);
  }
  // Exact symmetry about zero.
  for (int k = 0; k < n / 2; ++k) {
    const auto lo = static_cast<std::size_t>(k);
    const auto hi = static_cast<std::size_t>(n - 1 - k);
    const double x = 0.5 * (rule.nodes[hi] - rule.nodes[lo]);
    const double w = 0.5 * (rule.weights[hi] + rule.weights[lo]);
    rule.nodes[lo] = -x;
    rule.nodes[hi] = x;
    rule.weights[lo] = rule.weights[hi] = w;
  }
  if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
  return rule;
}

}  // namespace

const GaussHermiteRule& gauss_hermite(int order) {
  if (order < 1 || order > 200) throw ConfigError("quadrature order must lie in [1, 200]");
  static std::mutex mutex;
  static std::map<int, GaussHermiteRule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, compute_rule(order)).first;
  return it->second;
}

}  // namespace mcqlab
