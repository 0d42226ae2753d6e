// Seeded simulation studies for the estimator: Wald coverage and sigma_u
// recovery under the generating model, and LRT size under the null.

#include <doctest.h>

#include <cmath>
#include <iostream>
#include <map>

#include "fixtures.hpp"
#include "mcqlab/glmm.hpp"

using namespace mcqlab;

namespace {

const ModelSpec kModel{"model1", "is_correct", {"n_distractors", "header_id"}, "student_id"};

Bank plain_bank(std::uint64_t seed, int n_headers, int lo, int hi) {
  BankSpec s;
  s.items_per_header = 300;
  s.poisson_lambda = 4.0;  // keeps the k = 1 reference level from being starved
  s.distractor_min = lo;
  s.distractor_max = hi;
  s.seed = seed;
  return generate_bank(s, fixture::headers(n_headers));
}

}  // namespace

TEST_CASE("coefficients and sigma_u are recovered under the generating model") {
  const Bank bank = plain_bank(2024, 15, 1, 7);
  CohortSpec c;
  c.n_students = 271;
  c.sigma_u = 0.8;
  c.beta0 = 2.0;
  c.answers_per_student = {200, 200};
  for (int k = 1; k <= 7; ++k) c.level_effects[std::to_string(k)] = -0.1 * (k - 1);
  for (int h = 1; h <= 15; ++h) c.header_effects[h] = 0.04 * (h - 8);

  // Truth in the fit's reference coding (level 1, header 1 absorbed).
  std::map<std::string, double> truth;
  truth["(Intercept)"] = c.beta0 + c.level_effects["1"] + c.header_effects[1];
  for (int k = 2; k <= 7; ++k) truth["n_distractors=" + std::to_string(k)] = c.level_effects[std::to_string(k)] - c.level_effects["1"];
  for (int h = 2; h <= 15; ++h) truth["header_id=" + std::to_string(h)] = c.header_effects[h] - c.header_effects[1];

  const int reps = 50;
  std::map<std::string, int> covered;
  int sigma_ok = 0;
  for (int r = 0; r < reps; ++r) {
    c.seed = 5000 + static_cast<std::uint64_t>(r);
    const GlmmFit fit = fit_glmm(simulate_cohort(c, bank.items), kModel);
    REQUIRE(fit.converged);
    for (std::size_t j = 0; j < fit.column_names.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (std::abs(fit.beta[jj] - truth.at(fit.column_names[j])) <= 1.959964 * fit.std_errors[jj]) {
        ++covered[fit.column_names[j]];
      }
    }
    if (std::abs(fit.sigma_u - c.sigma_u) <= 0.15) ++sigma_ok;
  }
  for (const auto& [name, value] : truth) {
    INFO(name);
    CHECK(covered[name] >= 45);
  }
  CHECK(sigma_ok == reps);
}

TEST_CASE("LRT size under the null") {
  const Bank bank = plain_bank(77, 3, 1, 3);
  CohortSpec c;
  c.n_students = 100;
  c.sigma_u = 0.8;
  c.beta0 = 1.0;
  c.answers_per_student = {60, 60};
  c.level_effects = {{"1", 0.0}, {"2", 0.0}, {"3", 0.0}};
  const ModelSpec reduced_spec{"reduced", "is_correct", {"header_id"}, "student_id"};
  FitOptions opts;
  opts.compute_std_errors = false;

  const int reps = 200;
  int rejected = 0;
  for (int r = 0; r < reps; ++r) {
    c.seed = 9000 + static_cast<std::uint64_t>(r);
    const AnswerLog log = simulate_cohort(c, bank.items);
    const GlmmFit full = fit_glmm(log, kModel, opts);
    const GlmmFit reduced = fit_glmm(log, reduced_spec, opts);
    REQUIRE(full.converged);
    REQUIRE(reduced.converged);
    if (lrt(full, reduced).p_value < 0.05) ++rejected;
  }
  const double rate = rejected / static_cast<double>(reps);
  INFO("rejection rate " << rate);
  CHECK(rate >= 0.01);
  CHECK(rate <= 0.10);
}
