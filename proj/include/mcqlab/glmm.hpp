#pragma once

// Random-intercept logistic regression ("mixed binomial regression"): fixed
// categorical effects plus one Gaussian intercept per student.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mcqlab/cohort_sim.hpp"
#include "mcqlab/design.hpp"
#include "mcqlab/glmm_kernel.hpp"

namespace mcqlab {

struct FitOptions {
  int quadrature = 9;
  int max_iter = 200;
  double grad_tol = 1e-6;
  double dev_tol = 1e-9;
  // Fit the plain logistic model (sigma_u held at 0).
  bool fix_sigma_zero = false;
  bool compute_std_errors = true;
  Exec exec = Exec::Parallel;
};

struct GlmmFit {
  ModelSpec spec;
  std::vector<std::string> column_names;
  Eigen::VectorXd beta;
  double sigma_u = 0.0;
  double loglik = 0.0;
  // |beta| + 1 entries; the last is for sigma_u (0 when sigma_u is held at 0).
  Eigen::VectorXd std_errors;
  long long n_obs = 0;
  int n_groups = 0;
  int quadrature_order = 0;
  bool converged = false;
  int iterations = 0;
  bool sigma_fixed_zero = false;
  double gradient_max_norm = 0.0;
  double last_deviance_change = 0.0;
  std::vector<std::string> warnings;
  std::vector<FactorCoding> factors;
  std::vector<LevelCombo> combos;
  // Deviance after every accepted optimizer step (starting point first).
  std::vector<double> deviance_trace;

  int n_params() const noexcept { return static_cast<int>(beta.size()) + (sigma_fixed_zero ? 0 : 1); }
};

// Marginal log-likelihood. sigma_u = 0 gives the exact logistic likelihood.
double loglik_glmm(const Design& design, const Eigen::VectorXd& beta, double sigma_u, int order,
                   Exec exec = Exec::Parallel);

// Maximizes the marginal likelihood over (beta, log sigma_u) with BFGS and a
// backtracking line search that never accepts a deviance increase. Hitting
// max_iter returns converged = false rather than throwing.
GlmmFit fit_glmm(const Design& design, const ModelSpec& spec, const FitOptions& opts = {});
GlmmFit fit_glmm(std::span<const AnswerRecord> log, const ModelSpec& spec, const FitOptions& opts = {});

enum class PredictionMode { Typical, PopulationAveraged };
std::string_view to_string(PredictionMode mode) noexcept;
PredictionMode parse_prediction_mode(std::string_view text);

// Probability of a correct answer at one level of the leading fixed factor,
// averaged over the other factors' observed level mix (probability scale).
// Typical evaluates at u = 0; PopulationAveraged integrates over u.
double predict_prob(const GlmmFit& fit, std::string_view level, PredictionMode mode = PredictionMode::Typical);

struct LrtResult {
  std::string name;
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  bool boundary_corrected = false;
};

// Likelihood-ratio test of nested fits. Dropping sigma_u uses the
// 0.5 chi2(df-1) + 0.5 chi2(df) boundary mixture.
LrtResult lrt(const GlmmFit& full, const GlmmFit& reduced);

// Upper tail of chi-square(df); df = 0 is a point mass at zero.
double chi_square_upper(double statistic, int df);

struct ProportionRow {
  std::string level;
  long long n_items = 0;
  long long n_answers = 0;
  long long n_correct = 0;
  double proportion = 0.0;
};

// Correct / total answers per level of one factor, ascending by level.
std::vector<ProportionRow> naive_proportions(std::span<const AnswerRecord> log, std::string_view factor);

nlohmann::json to_json(const GlmmFit& fit);
GlmmFit glmm_fit_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const LrtResult& t);
LrtResult lrt_from_json(const nlohmann::json& doc);

}  // namespace mcqlab
