#include "mcqlab/glmm_kernel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numbers>
#include <vector>

#ifdef MCQLAB_HAVE_OPENMP
#include <omp.h>
#endif

#include "mcqlab/errors.hpp"
#include "mcqlab/quadrature.hpp"

namespace mcqlab {

namespace {

std::atomic<int> g_thread_limit{0};

// log(1 + e^x) and the logistic function from one exponential.
inline void log1pexp_and_prob(double x, double& log1pexp, double& prob) {
  if (x > 0.0) {
    const double t = std::exp(-x);
    log1pexp = x + std::log1p(t);
    prob = 1.0 / (1.0 + t);
  } else {
    const double t = std::exp(x);
    log1pexp = std::log1p(t);
    prob = t / (1.0 + t);
  }
}

inline double inv_logit(double x) {
  double l = 0.0;
  double p = 0.0;
  log1pexp_and_prob(x, l, p);
  return p;
}

// Neumaier compensated sum.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    const double t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

struct GroupView {
  std::size_t start;
  std::size_t size;
};

GroupView group_view(const Design& d, std::size_t g) {
  return {d.group_start[g], d.group_start[g + 1] - d.group_start[g]};
}

// Safeguarded Newton on h'(u) = sum(y - p(eta + u)) - u / sigma^2, which is
// strictly decreasing with its root inside [-n sigma^2, n sigma^2].
double find_mode(const double* eta, const double* y, std::size_t n, double inv_var, std::size_t group,
                 const Design& design) {
  const double var = 1.0 / inv_var;
  double lo = -static_cast<double>(n) * var;
  double hi = static_cast<double>(n) * var;
  double u = 0.0;
  for (int it = 0; it < 200; ++it) {
    double score = -u * inv_var;
    double info = inv_var;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = inv_logit(eta[i] + u);
      score += y[i] - p;
      info += p * (1.0 - p);
    }
    if (score > 0.0) {
      lo = std::max(lo, u);
    } else if (score < 0.0) {
      hi = std::min(hi, u);
    } else {
      return u;
    }
    double next = u + score / info;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = next - u;
    u = next;
    if (std::abs(step) <= 1e-10 || hi - lo <= 1e-10 * std::max(1.0, std::abs(u))) return u;
  }
  throw NumericalError("mode search did not converge for group " + design.group_labels[group]);
}

struct Scratch {
  std::vector<double> eta;
  std::vector<double> prob;    // n x Q, node-major
  std::vector<double> logterm; // Q
  std::vector<double> hprime;  // Q
  std::vector<double> coef;    // n
};

// One group's log-likelihood term and, optionally, its gradient (n_cols + 1).
double group_term(const Design& d, std::size_t g, const Eigen::VectorXd& beta, double log_sigma,
                  const GaussHermiteRule& rule, double* grad_out, Scratch& s) {
  const auto [start, n] = group_view(d, g);
  const double* y = d.y.data() + start;
  const auto X = d.X.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n));

  s.eta.resize(n);
  Eigen::Map<Eigen::VectorXd>(s.eta.data(), static_cast<Eigen::Index>(n)).noalias() = X * beta;
  for (double e : s.eta) {
    if (!std::isfinite(e)) throw NumericalError("non-finite linear predictor in group " + d.group_labels[g]);
  }

  const double sigma = std::exp(log_sigma);
  const double inv_var = 1.0 / (sigma * sigma);
  const double mode = find_mode(s.eta.data(), y, n, inv_var, g, d);

  double s1 = 0.0;  // sum p(1-p) at the mode
  double s3 = 0.0;  // sum p(1-p)(1-2p) at the mode
  for (std::size_t i = 0; i < n; ++i) {
    const double p = inv_logit(s.eta[i] + mode);
    const double w = p * (1.0 - p);
    s1 += w;
    s3 += w * (1.0 - 2.0 * p);
  }
  const double h2 = -s1 - inv_var;
  const double h3 = -s3;
  const double scale = 1.0 / std::sqrt(-h2);
  const double root2s = std::numbers::sqrt2 * scale;

  const int q = rule.order();
  const auto qn = static_cast<std::size_t>(q);
  s.logterm.resize(qn);
  s.hprime.resize(qn);
  if (grad_out) s.prob.resize(n * qn);

  const double log_norm = -log_sigma - 0.5 * std::log(2.0 * std::numbers::pi);
  for (std::size_t k = 0; k < qn; ++k) {
    const double z = rule.nodes[k];
    const double u = mode + root2s * z;
    CompensatedSum h;
    double hp = -u * inv_var;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = s.eta[i] + u;
      double l = 0.0;
      double p = 0.0;
      log1pexp_and_prob(e, l, p);
      h.add(y[i] * e - l);
      hp += y[i] - p;
      if (grad_out) s.prob[k * n + i] = p;
    }
    h.add(-0.5 * u * u * inv_var + log_norm);
    s.hprime[k] = hp;
    s.logterm[k] = std::log(rule.weights[k]) + z * z + h.value();
  }
  const double peak = *std::max_element(s.logterm.begin(), s.logterm.end());
  double total = 0.0;
  for (double lt : s.logterm) total += std::exp(lt - peak);
  const double value = std::log(root2s) + peak + std::log(total);
  if (!grad_out) return value;

  // Normalized node weights pi_k, then the chain rule through (u*, s).
  double a_u = 0.0;
  double a_s = 1.0 / scale;
  double d_tau = 0.0;
  for (std::size_t k = 0; k < qn; ++k) {
    const double pi = std::exp(s.logterm[k] - peak) / total;
    s.logterm[k] = pi;
    const double u = mode + root2s * rule.nodes[k];
    a_u += pi * s.hprime[k];
    a_s += pi * s.hprime[k] * std::numbers::sqrt2 * rule.nodes[k];
    d_tau += pi * (u * u * inv_var - 1.0);
  }
  const double half_s3 = 0.5 * scale * scale * scale;
  s.coef.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double expected_p = 0.0;
    for (std::size_t k = 0; k < qn; ++k) expected_p += s.logterm[k] * s.prob[k * n + i];
    const double p = inv_logit(s.eta[i] + mode);
    const double w = p * (1.0 - p);
    s.coef[i] = (y[i] - expected_p) + a_u * w / h2 + a_s * half_s3 * (h3 * w / h2 - w * (1.0 - 2.0 * p));
  }
  const auto p_cols = static_cast<Eigen::Index>(d.n_cols());
  Eigen::Map<Eigen::VectorXd> grad(grad_out, p_cols + 1);
  grad.head(p_cols).noalias() =
      X.transpose() * Eigen::Map<const Eigen::VectorXd>(s.coef.data(), static_cast<Eigen::Index>(n));
  const double du_dtau = -(2.0 * mode * inv_var) / h2;
  const double ds_dtau = half_s3 * (2.0 * inv_var + h3 * du_dtau);
  grad(p_cols) = d_tau + a_u * du_dtau + a_s * ds_dtau;
  return value;
}

double logistic_group_term(const Design& d, std::size_t g, const Eigen::VectorXd& beta, double* grad_out,
                           Scratch& s) {
  const auto [start, n] = group_view(d, g);
  const double* y = d.y.data() + start;
  const auto X = d.X.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n));
  s.eta.resize(n);
  Eigen::Map<Eigen::VectorXd>(s.eta.data(), static_cast<Eigen::Index>(n)).noalias() = X * beta;
  s.coef.resize(n);
  CompensatedSum ll;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = s.eta[i];
    if (!std::isfinite(e)) throw NumericalError("non-finite linear predictor in group " + d.group_labels[g]);
    double l = 0.0;
    double p = 0.0;
    log1pexp_and_prob(e, l, p);
    ll.add(y[i] * e - l);
    s.coef[i] = y[i] - p;
  }
  if (grad_out) {
    Eigen::Map<Eigen::VectorXd>(grad_out, static_cast<Eigen::Index>(d.n_cols())).noalias() =
        X.transpose() * Eigen::Map<const Eigen::VectorXd>(s.coef.data(), static_cast<Eigen::Index>(n));
  }
  return ll.value();
}

// Fills per-group values (and gradient rows), then reduces in group order.
template <typename Term>
LoglikEval drive(const Design& d, std::size_t grad_size, bool want_gradient, Exec exec, Term&& term) {
  const std::size_t n_groups = d.n_groups();
  std::vector<double> values(n_groups, 0.0);
  std::vector<double> grads(want_gradient ? n_groups * grad_size : 0, 0.0);

  if (exec == Exec::Serial) {
    Scratch scratch;
    for (std::size_t g = 0; g < n_groups; ++g) {
      values[g] = term(g, want_gradient ? grads.data() + g * grad_size : nullptr, scratch);
    }
  } else {
    std::vector<std::exception_ptr> failures(n_groups);
    const auto n = static_cast<long long>(n_groups);
#ifdef MCQLAB_HAVE_OPENMP
    const int limit = thread_limit();
    const int threads = limit > 0 ? limit : omp_get_max_threads();
#pragma omp parallel num_threads(threads)
#endif
    {
      Scratch scratch;
#pragma omp for schedule(dynamic, 4)
      for (long long gi = 0; gi < n; ++gi) {
        const auto g = static_cast<std::size_t>(gi);
        try {
          values[g] = term(g, want_gradient ? grads.data() + g * grad_size : nullptr, scratch);
        } catch (...) {
          failures[g] = std::current_exception();
        }
      }
    }
    for (const auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
  }

  LoglikEval out;
  CompensatedSum total;
  for (double v : values) total.add(v);
  out.value = total.value();
  if (want_gradient) {
    out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grad_size));
    for (std::size_t g = 0; g < n_groups; ++g) {
      out.gradient += Eigen::Map<const Eigen::VectorXd>(grads.data() + g * grad_size,
                                                        static_cast<Eigen::Index>(grad_size));
    }
  }
  return out;
}

}  // namespace

void set_thread_limit(int threads) {
  g_thread_limit.store(std::max(0, threads));
#ifdef MCQLAB_HAVE_OPENMP
  // Generation and simulation loops use the runtime default.
  if (threads > 0) omp_set_num_threads(threads);
#endif
}
int thread_limit() noexcept { return g_thread_limit.load(); }

LoglikEval evaluate_glmm(const Design& design, const Eigen::VectorXd& beta, double log_sigma, int order,
                         bool want_gradient, Exec exec) {
  if (static_cast<std::size_t>(beta.size()) != design.n_cols()) {
    throw ConfigError("beta has the wrong length for this design");
  }
  if (!std::isfinite(log_sigma)) throw NumericalError("log sigma_u is not finite");
  const auto& rule = gauss_hermite(order);
  return drive(design, design.n_cols() + 1, want_gradient, exec,
               [&](std::size_t g, double* grad, Scratch& s) {
                 return group_term(design, g, beta, log_sigma, rule, grad, s);
               });
}

LoglikEval evaluate_logistic(const Design& design, const Eigen::VectorXd& beta, bool want_gradient, Exec exec) {
  if (static_cast<std::size_t>(beta.size()) != design.n_cols()) {
    throw ConfigError("beta has the wrong length for this design");
  }
  return drive(design, design.n_cols(), want_gradient, exec, [&](std::size_t g, double* grad, Scratch& s) {
    return logistic_group_term(design, g, beta, grad, s);
  });
}

double group_mode(const Design& design, std::size_t group, const Eigen::VectorXd& beta, double sigma_u) {
  if (!(sigma_u > 0.0)) return 0.0;
  const auto [start, n] = group_view(design, group);
  Eigen::VectorXd eta = design.X.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) * beta;
  return find_mode(eta.data(), design.y.data() + start, n, 1.0 / (sigma_u * sigma_u), group, design);
}

}  // namespace mcqlab
