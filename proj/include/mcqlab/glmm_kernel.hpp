#pragma once

// Marginal log-likelihood of the random-intercept logistic model and its
// gradient with respect to (beta, log sigma_u).
//
// Each group's integral over its intercept u is approximated by adaptive
// Gauss-Hermite quadrature: nodes are centered at the conditional mode u* and
// scaled by s = (-h''(u*))^(-1/2), where h is the group's joint log density.
// The returned gradient is the exact derivative of that approximation,
// including the dependence of u* and s on the parameters.
//
// Two drivers share the per-group kernel: a serial reference loop and an
// OpenMP loop over groups. Both reduce group terms in ascending group order,
// so their results are bitwise identical.

#include <Eigen/Core>

#include "mcqlab/design.hpp"

namespace mcqlab {

enum class Exec { Serial, Parallel };

struct LoglikEval {
  double value = 0.0;
  // Size n_cols + 1; the last entry is d/d(log sigma_u). Empty unless requested.
  Eigen::VectorXd gradient;
};

// sigma_u > 0 path. Throws NumericalError on non-finite predictors or when the
// inner mode search fails (message names the group).
LoglikEval evaluate_glmm(const Design& design, const Eigen::VectorXd& beta, double log_sigma, int order,
                         bool want_gradient, Exec exec);

// sigma_u = 0: exact plain logistic log-likelihood; gradient has n_cols entries.
LoglikEval evaluate_logistic(const Design& design, const Eigen::VectorXd& beta, bool want_gradient, Exec exec);

// Conditional mode of one group's intercept, for diagnostics and tests.
double group_mode(const Design& design, std::size_t group, const Eigen::VectorXd& beta, double sigma_u);

// Caps OpenMP threads used by the parallel drivers (0 = library default).
void set_thread_limit(int threads);
int thread_limit() noexcept;

}  // namespace mcqlab
