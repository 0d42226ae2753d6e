#pragma once

// Reference computations the library is checked against. None of them call
// into the code under test beyond reading plain data out of a Design.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mcqlab/design.hpp"
#include "mcqlab/guessing.hpp"

namespace oracle {

// Marginal log-likelihood of a random-intercept logistic model by a dense
// trapezoid rule over u in [-12 sigma, 12 sigma] for each group.
double trapezoid_loglik(const mcqlab::Design& d, const Eigen::VectorXd& beta, double sigma, int points = 20001);

// Plain logistic regression by Newton-Raphson from zero.
Eigen::VectorXd newton_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int max_iter = 100);

// Minimizer of the guessing MSE over [0, 1] by grid search with local
// refinement.
double grid_search_guess(const mcqlab::GuessInput& input);

// Truncated Poisson pmf computed directly from lambda^k e^-lambda / k!.
std::vector<double> direct_truncated_poisson(double lambda, int lo, int hi);

// Pearson chi-square goodness-of-fit p-value with observed.size() - 1
// degrees of freedom, via a series expansion of the regularized gamma.
double chi_square_gof_p(const std::vector<long long>& observed, const std::vector<double>& expected_prob);

// Upper tail of chi-square(df) by the series / continued fraction for the
// incomplete gamma function.
double chi_square_sf(double x, double df);

struct CsvRecount {
  long long rows = 0;
  long long correct = 0;
  std::vector<long long> by_distractors = std::vector<long long>(8, 0);
};

// Counts rows of an answer CSV by re-reading the file line by line.
CsvRecount recount_csv(const std::string& path);

// Generic central-difference derivative.
template <typename F>
double central_diff(F&& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace oracle
