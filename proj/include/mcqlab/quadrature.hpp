#pragma once

#include <vector>

namespace mcqlab {

// Gauss-Hermite rule for weight exp(-x^2): sum_k w_k g(x_k) ~ int exp(-x^2) g(x) dx.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  int order() const noexcept { return static_cast<int>(nodes.size()); }
};

// Cached per order; safe to call from several threads. order >= 1.
const GaussHermiteRule& gauss_hermite(int order);

}  // namespace mcqlab
