#include "mcqlab/glmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <unordered_set>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/special_functions/gamma.hpp>

#include "mcqlab/errors.hpp"
#include "mcqlab/quadrature.hpp"

namespace mcqlab {

namespace {

constexpr int kPopulationOrder = 40;
constexpr double kMaxStep = 10.0;

double inv_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Negative log-likelihood in the optimizer's coordinates.
class Objective {
 public:
  Objective(const Design& design, const FitOptions& opts) : design_(design), opts_(opts) {}

  std::size_t dim() const { return design_.n_cols() + (opts_.fix_sigma_zero ? 0 : 1); }

  // Returns nullopt when the likelihood cannot be evaluated at theta.
  std::optional<LoglikEval> operator()(const Eigen::VectorXd& theta) const {
    try {
      LoglikEval e;
      if (opts_.fix_sigma_zero) {
        e = evaluate_logistic(design_, theta, true, opts_.exec);
      } else {
        e = evaluate_glmm(design_, theta.head(static_cast<Eigen::Index>(design_.n_cols())),
                          theta(static_cast<Eigen::Index>(design_.n_cols())), opts_.quadrature, true, opts_.exec);
      }
      if (!std::isfinite(e.value) || !e.gradient.allFinite()) return std::nullopt;
      e.value = -e.value;
      e.gradient = -e.gradient;
      return e;
    } catch (const NumericalError&) {
      return std::nullopt;
    }
  }

 private:
  const Design& design_;
  const FitOptions& opts_;
};

// Central differences of the analytic gradient.
Eigen::MatrixXd numerical_hessian(const Objective& f, const Eigen::VectorXd& theta) {
  const auto n = theta.size();
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double step = 1e-4 * std::max(1.0, std::abs(theta(j)));
    Eigen::VectorXd up = theta;
    Eigen::VectorXd down = theta;
    up(j) += step;
    down(j) -= step;
    auto fu = f(up);
    auto fd = f(down);
    if (!fu || !fd) throw NumericalError("likelihood not evaluable near the optimum");
    h.col(j) = (fu->gradient - fd->gradient) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

// Starting inverse Hessian: w * X'X for the fixed effects, and a finite
// difference curvature for log sigma_u.
Eigen::MatrixXd initial_inverse_hessian(const Design& d, const Objective& f, const Eigen::VectorXd& theta,
                                        double ybar) {
  const auto p = static_cast<Eigen::Index>(d.n_cols());
  const auto n = theta.size();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  const double w = std::max(ybar * (1.0 - ybar), 1e-3);
  h.topLeftCorner(p, p) = w * (d.X.transpose() * d.X);
  if (n > p) {
    const double step = 1e-3;
    Eigen::VectorXd up = theta;
    Eigen::VectorXd down = theta;
    up(p) += step;
    down(p) -= step;
    auto fu = f(up);
    auto fd = f(down);
    double curv = 0.0;
    if (fu && fd) curv = (fu->gradient(p) - fd->gradient(p)) / (2.0 * step);
    if (!(curv > 0.0) || !std::isfinite(curv)) curv = 0.5 * static_cast<double>(d.n_groups());
    h(p, p) = curv;
  }
  h.diagonal().array() += 1e-8;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
    return Eigen::MatrixXd::Identity(n, n) / std::max(1.0, h.diagonal().maxCoeff());
  }
  return ldlt.solve(Eigen::MatrixXd::Identity(n, n));
}

// Inverse of a symmetric matrix that should be positive definite; falls back
// to the pseudo-inverse over positive eigenvalues.
Eigen::MatrixXd covariance_from_hessian(const Eigen::MatrixXd& h, bool& degenerate) {
  const auto n = h.rows();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  degenerate = false;
  if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all()) {
    return ldlt.solve(Eigen::MatrixXd::Identity(n, n));
  }
  degenerate = true;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
  Eigen::VectorXd inv = eig.eigenvalues();
  const double cutoff = 1e-10 * std::max(1.0, inv.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < n; ++i) inv(i) = inv(i) > cutoff ? 1.0 / inv(i) : 0.0;
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

void separation_warnings(const Design& d, std::vector<std::string>& warnings) {
  for (const auto& f : d.factors) {
    for (std::size_t l = 0; l < f.levels.size(); ++l) {
      if (f.successes[l] == 0 || f.successes[l] == f.counts[l]) {
        warnings.push_back("separation: " + f.name + "=" + f.levels[l] + " has all " +
                           (f.successes[l] == 0 ? "incorrect" : "correct") + " responses");
      }
    }
  }
}

}  // namespace

double loglik_glmm(const Design& design, const Eigen::VectorXd& beta, double sigma_u, int order, Exec exec) {
  if (order < 1) throw ConfigError("quadrature order must be >= 1");
  if (!(sigma_u >= 0.0) || !std::isfinite(sigma_u)) throw ConfigError("sigma_u must be finite and >= 0");
  if (sigma_u == 0.0) return evaluate_logistic(design, beta, false, exec).value;
  return evaluate_glmm(design, beta, std::log(sigma_u), order, false, exec).value;
}

GlmmFit fit_glmm(std::span<const AnswerRecord> log, const ModelSpec& spec, const FitOptions& opts) {
  return fit_glmm(build_design(log, spec), spec, opts);
}

GlmmFit fit_glmm(const Design& design, const ModelSpec& spec, const FitOptions& opts) {
  if (opts.quadrature < 1) throw ConfigError("quadrature order must be >= 1");
  if (opts.max_iter < 1) throw ConfigError("max_iter must be >= 1");
  if (design.n_groups() == 0) throw ConfigError("design has no groups");

  const Objective objective(design, opts);
  const auto p = static_cast<Eigen::Index>(design.n_cols());
  const Eigen::Index dim = static_cast<Eigen::Index>(objective.dim());

  const double ybar = std::clamp(design.y.mean(), 1e-3, 1.0 - 1e-3);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim);
  theta(0) = std::log(ybar / (1.0 - ybar));
  if (dim > p) theta(p) = std::log(0.5);

  GlmmFit fit;
  fit.spec = spec;
  fit.column_names = design.column_names;
  fit.n_obs = static_cast<long long>(design.n_obs());
  fit.n_groups = static_cast<int>(design.n_groups());
  fit.quadrature_order = opts.fix_sigma_zero ? 0 : opts.quadrature;
  fit.sigma_fixed_zero = opts.fix_sigma_zero;
  fit.factors = design.factors;
  fit.combos = design.combos;
  separation_warnings(design, fit.warnings);

  auto current = objective(theta);
  if (!current) throw NumericalError("likelihood not evaluable at the starting point");
  const Eigen::MatrixXd h0_inv = initial_inverse_hessian(design, objective, theta, ybar);
  Eigen::MatrixXd h_inv = h0_inv;
  bool fresh = true;
  fit.deviance_trace.push_back(2.0 * current->value);

  double dev_change = std::numeric_limits<double>::infinity();
  int iter = 0;
  bool converged = current->gradient.cwiseAbs().maxCoeff() < opts.grad_tol;
  if (converged) dev_change = 0.0;

  while (!converged && iter < opts.max_iter) {
    ++iter;
    const Eigen::VectorXd& g = current->gradient;
    Eigen::VectorXd dir = -h_inv * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      h_inv = h0_inv;
      fresh = true;
      dir = -h_inv * g;
      slope = g.dot(dir);
    }
    const double longest = dir.cwiseAbs().maxCoeff();
    if (longest > kMaxStep) {
      dir *= kMaxStep / longest;
      slope *= kMaxStep / longest;
    }

    std::optional<LoglikEval> trial;
    Eigen::VectorXd theta_new;
    double alpha = 1.0;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      theta_new = theta + alpha * dir;
      trial = objective(theta_new);
      if (trial && trial->value <= current->value + 1e-4 * alpha * slope) break;
      trial.reset();
    }

    if (!trial) {
      if (g.cwiseAbs().maxCoeff() < opts.grad_tol) {
        converged = true;
        dev_change = 0.0;
        break;
      }
      if (!fresh) {
        h_inv = h0_inv;
        fresh = true;
        continue;
      }
      fit.warnings.push_back("line search failed to reduce the deviance");
      break;
    }

    const Eigen::VectorXd s = theta_new - theta;
    const Eigen::VectorXd yv = trial->gradient - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const Eigen::VectorXd hy = h_inv * yv;
      const double rho = 1.0 / sy;
      h_inv += rho * ((1.0 + rho * yv.dot(hy)) * (s * s.transpose()) - (hy * s.transpose() + s * hy.transpose()));
      fresh = false;
    }
    dev_change = 2.0 * (current->value - trial->value);
    theta = theta_new;
    current = std::move(trial);
    fit.deviance_trace.push_back(2.0 * current->value);
    converged = current->gradient.cwiseAbs().maxCoeff() < opts.grad_tol && dev_change < opts.dev_tol;
  }

  fit.iterations = iter;
  fit.converged = converged;
  fit.gradient_max_norm = current->gradient.cwiseAbs().maxCoeff();
  fit.last_deviance_change = dev_change;
  fit.loglik = -current->value;
  fit.beta = theta.head(p);
  fit.sigma_u = opts.fix_sigma_zero ? 0.0 : std::exp(theta(p));
  if (!converged && iter >= opts.max_iter) {
    fit.warnings.push_back("max_iter reached before convergence");
  }

  fit.std_errors = Eigen::VectorXd::Zero(p + 1);
  if (opts.compute_std_errors) {
    try {
      bool degenerate = false;
      const Eigen::MatrixXd cov = covariance_from_hessian(numerical_hessian(objective, theta), degenerate);
      if (degenerate) fit.warnings.push_back("observed information is singular; standard errors use a pseudo-inverse");
      for (Eigen::Index j = 0; j < p; ++j) fit.std_errors(j) = std::sqrt(std::max(0.0, cov(j, j)));
      if (dim > p) fit.std_errors(p) = fit.sigma_u * std::sqrt(std::max(0.0, cov(p, p)));
    } catch (const NumericalError& e) {
      fit.warnings.push_back(std::string("standard errors unavailable: ") + e.what());
    }
  }
  return fit;
}

std::string_view to_string(PredictionMode mode) noexcept {
  return mode == PredictionMode::Typical ? "typical" : "population";
}

PredictionMode parse_prediction_mode(std::string_view text) {
  if (text == "typical") return PredictionMode::Typical;
  if (text == "population") return PredictionMode::PopulationAveraged;
  throw ConfigError("unknown prediction mode '" + std::string(text) + "'");
}

double predict_prob(const GlmmFit& fit, std::string_view level, PredictionMode mode) {
  if (fit.factors.empty()) throw ConfigError("fit carries no factor levels");
  const auto& lead = fit.factors.front();
  const int li = lead.index_of(level);
  if (li < 0) throw ConfigError("level '" + std::string(level) + "' not present in factor " + lead.name);

  double base = fit.beta(0);
  const int lead_col = lead.column[static_cast<std::size_t>(li)];
  if (lead_col >= 0) base += fit.beta(lead_col);

  const GaussHermiteRule* rule = nullptr;
  if (mode == PredictionMode::PopulationAveraged && fit.sigma_u > 0.0) rule = &gauss_hermite(kPopulationOrder);

  auto prob_at = [&](double eta) {
    if (!rule) return inv_logit(eta);
    double acc = 0.0;
    for (std::size_t k = 0; k < rule->nodes.size(); ++k) {
      acc += rule->weights[k] * inv_logit(eta + std::numbers::sqrt2 * fit.sigma_u * rule->nodes[k]);
    }
    return acc / std::sqrt(std::numbers::pi);
  };

  if (fit.combos.empty()) return prob_at(base);
  double weighted = 0.0;
  double total = 0.0;
  for (const auto& combo : fit.combos) {
    double eta = base;
    for (std::size_t f = 0; f < combo.levels.size(); ++f) {
      const int col = fit.factors[f + 1].column[static_cast<std::size_t>(combo.levels[f])];
      if (col >= 0) eta += fit.beta(col);
    }
    weighted += static_cast<double>(combo.count) * prob_at(eta);
    total += static_cast<double>(combo.count);
  }
  return weighted / total;
}

double chi_square_upper(double statistic, int df) {
  if (df < 0) throw ConfigError("negative degrees of freedom");
  if (!(statistic > 0.0)) return 1.0;
  if (df == 0) return 0.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * statistic);
}

LrtResult lrt(const GlmmFit& full, const GlmmFit& reduced) {
  if (full.n_obs != reduced.n_obs || full.n_groups != reduced.n_groups) {
    throw ConfigError("lrt: fits are on different data");
  }
  if (full.spec.response != reduced.spec.response || full.spec.group_factor != reduced.spec.group_factor) {
    throw ConfigError("lrt: fits differ in response or grouping");
  }
  std::unordered_set<std::string> full_cols(full.column_names.begin(), full.column_names.end());
  for (const auto& c : reduced.column_names) {
    if (!full_cols.count(c)) throw ConfigError("lrt: reduced column '" + c + "' missing from full model");
  }
  if (full.sigma_fixed_zero && !reduced.sigma_fixed_zero) {
    throw ConfigError("lrt: reduced model estimates sigma_u but full model does not");
  }
  LrtResult out;
  out.df = full.n_params() - reduced.n_params();
  out.statistic = std::max(0.0, 2.0 * (full.loglik - reduced.loglik));
  out.boundary_corrected = !full.sigma_fixed_zero && reduced.sigma_fixed_zero;
  if (out.df == 0) {
    out.p_value = 1.0;
  } else if (out.boundary_corrected) {
    out.p_value = 0.5 * chi_square_upper(out.statistic, out.df - 1) + 0.5 * chi_square_upper(out.statistic, out.df);
  } else {
    out.p_value = chi_square_upper(out.statistic, out.df);
  }
  out.p_value = std::clamp(out.p_value, 0.0, 1.0);
  return out;
}

std::vector<ProportionRow> naive_proportions(std::span<const AnswerRecord> log, std::string_view factor) {
  if (!is_known_factor(factor)) throw ConfigError("unknown factor '" + std::string(factor) + "'");
  std::map<std::string, ProportionRow> rows;
  std::map<std::string, std::set<int>> items;
  for (const auto& rec : log) {
    auto label = factor_label(rec, factor);
    auto& row = rows[label];
    ++row.n_answers;
    if (rec.is_correct) ++row.n_correct;
    items[label].insert(rec.item_id);
  }
  std::vector<std::string> levels;
  for (const auto& [label, row] : rows) levels.push_back(label);
  sort_levels(levels);
  std::vector<ProportionRow> out;
  for (const auto& label : levels) {
    ProportionRow row = rows[label];
    row.level = label;
    row.n_items = static_cast<long long>(items[label].size());
    row.proportion = static_cast<double>(row.n_correct) / static_cast<double>(row.n_answers);
    out.push_back(row);
  }
  return out;
}

// ---- JSON ----

namespace {
nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double number_or_nan(const nlohmann::json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}
}  // namespace

nlohmann::json to_json(const GlmmFit& fit) {
  nlohmann::json coefs = nlohmann::json::array();
  for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
    coefs.push_back({{"name", fit.column_names[static_cast<std::size_t>(j)]},
                     {"estimate", fit.beta(j)},
                     {"std_error", fit.std_errors(j)}});
  }
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& f : fit.factors) factors.push_back(to_json(f));
  nlohmann::json combos = nlohmann::json::array();
  for (const auto& c : fit.combos) combos.push_back({{"levels", c.levels}, {"count", c.count}});
  return {{"model", fit.spec.name},
          {"spec", to_json(fit.spec)},
          {"coefficients", coefs},
          {"sigma_u", fit.sigma_u},
          {"sigma_u_std_error", fit.std_errors(fit.beta.size())},
          {"sigma_fixed_zero", fit.sigma_fixed_zero},
          {"loglik", fit.loglik},
          {"converged", fit.converged},
          {"iterations", fit.iterations},
          {"gradient_max_norm", fit.gradient_max_norm},
          {"last_deviance_change", finite_or_null(fit.last_deviance_change)},
          {"n_obs", fit.n_obs},
          {"n_groups", fit.n_groups},
          {"quadrature_order", fit.quadrature_order},
          {"warnings", fit.warnings},
          {"factors", factors},
          {"combos", combos}};
}

GlmmFit glmm_fit_from_json(const nlohmann::json& doc) {
  GlmmFit fit;
  try {
    fit.spec = model_spec_from_json(doc.at("spec"));
    const auto& coefs = doc.at("coefficients");
    const auto p = static_cast<Eigen::Index>(coefs.size());
    fit.beta.resize(p);
    fit.std_errors.resize(p + 1);
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& c = coefs.at(static_cast<std::size_t>(j));
      fit.column_names.push_back(c.at("name").get<std::string>());
      fit.beta(j) = c.at("estimate").get<double>();
      fit.std_errors(j) = c.at("std_error").get<double>();
    }
    fit.sigma_u = doc.at("sigma_u").get<double>();
    fit.std_errors(p) = doc.at("sigma_u_std_error").get<double>();
    fit.sigma_fixed_zero = doc.at("sigma_fixed_zero").get<bool>();
    fit.loglik = doc.at("loglik").get<double>();
    fit.converged = doc.at("converged").get<bool>();
    fit.iterations = doc.at("iterations").get<int>();
    fit.gradient_max_norm = doc.at("gradient_max_norm").get<double>();
    fit.last_deviance_change = number_or_nan(doc.at("last_deviance_change"));
    fit.n_obs = doc.at("n_obs").get<long long>();
    fit.n_groups = doc.at("n_groups").get<int>();
    fit.quadrature_order = doc.at("quadrature_order").get<int>();
    fit.warnings = doc.at("warnings").get<std::vector<std::string>>();
    for (const auto& f : doc.at("factors")) fit.factors.push_back(factor_coding_from_json(f));
    for (const auto& c : doc.at("combos")) {
      fit.combos.push_back({c.at("levels").get<std::vector<int>>(), c.at("count").get<long long>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("fit record: ") + e.what());
  }
  return fit;
}

nlohmann::json to_json(const LrtResult& t) {
  return {{"name", t.name},
          {"statistic", t.statistic},
          {"df", t.df},
          {"p_value", t.p_value},
          {"boundary_corrected", t.boundary_corrected}};
}

LrtResult lrt_from_json(const nlohmann::json& doc) {
  LrtResult t;
  t.name = doc.value("name", std::string());
  t.statistic = doc.at("statistic").get<double>();
  t.df = doc.at("df").get<int>();
  t.p_value = doc.at("p_value").get<double>();
  t.boundary_corrected = doc.at("boundary_corrected").get<bool>();
  return t;
}

}  // namespace mcqlab
