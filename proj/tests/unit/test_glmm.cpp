#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "fixtures.hpp"
#include "mcqlab/errors.hpp"
#include "mcqlab/glmm.hpp"
#include "mcqlab/ingest_report.hpp"
#include "oracles.hpp"

using namespace mcqlab;

namespace {

// Logistic-regime data on plain items with 1..3 distractors over 4 headers.
AnswerLog logistic_log(std::uint64_t seed, double sigma_u, int students, int answers,
                       std::map<std::string, double> levels = {{"1", 1.2}, {"2", 0.8}, {"3", 0.4}}) {
  BankSpec s;
  s.items_per_header = 150;
  s.distractor_min = 1;
  s.distractor_max = 3;
  s.poisson_lambda = 2.0;
  s.seed = seed;
  const Bank bank = generate_bank(s, fixture::headers(4));
  CohortSpec c;
  c.n_students = students;
  c.sigma_u = sigma_u;
  c.level_effects = std::move(levels);
  c.header_effects = {{1, 0.0}, {2, 0.3}, {3, -0.2}, {4, 0.1}};
  c.answers_per_student = {answers, answers};
  c.seed = seed + 1000;
  return simulate_cohort(c, bank.items);
}

const ModelSpec kModel{"model1", "is_correct", {"n_distractors", "header_id"}, "student_id"};

}  // namespace

TEST_CASE("saturated one-factor logistic fit reproduces cell proportions") {
  const AnswerLog log = logistic_log(1, 0.5, 60, 40);
  FitOptions opts;
  opts.fix_sigma_zero = true;
  const ModelSpec spec{"sat", "is_correct", {"n_distractors"}, "student_id"};
  const GlmmFit fit = fit_glmm(log, spec, opts);
  REQUIRE(fit.converged);
  for (const auto& row : naive_proportions(log, "n_distractors")) {
    CHECK(std::abs(predict_prob(fit, row.level) - row.proportion) < 1e-6);
  }
}

TEST_CASE("sigma fixed at zero matches an independent Newton solver") {
  const AnswerLog log = logistic_log(2, 0.7, 80, 50);
  FitOptions opts;
  opts.fix_sigma_zero = true;
  const Design d = build_design(log, kModel);
  const GlmmFit fit = fit_glmm(d, kModel, opts);
  REQUIRE(fit.converged);
  const Eigen::VectorXd ref = oracle::newton_logistic(Eigen::MatrixXd(d.X), d.y);
  CHECK((fit.beta - ref).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(fit.sigma_u == 0.0);
  CHECK(fit.std_errors.size() == fit.beta.size() + 1);
  CHECK(fit.std_errors[fit.beta.size()] == 0.0);
}

TEST_CASE("no student effect in the generator") {
  const AnswerLog log = logistic_log(3, 0.0, 200, 60);
  const Design d = build_design(log, kModel);
  const GlmmFit fit = fit_glmm(d, kModel);
  REQUIRE(fit.converged);
  CHECK(fit.sigma_u < 0.05);
  const Eigen::VectorXd ref = oracle::newton_logistic(Eigen::MatrixXd(d.X), d.y);
  CHECK((fit.beta - ref).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("optimizer contract") {
  const AnswerLog log = logistic_log(4, 0.8, 120, 60);
  const GlmmFit fit = fit_glmm(log, kModel);
  REQUIRE(fit.converged);
  CHECK(fit.gradient_max_norm < 1e-6);
  CHECK(fit.last_deviance_change < 1e-9);
  CHECK(std::isfinite(fit.loglik));
  CHECK(fit.sigma_u > 0.4);
  CHECK(fit.std_errors.size() == fit.beta.size() + 1);
  for (Eigen::Index j = 0; j < fit.std_errors.size(); ++j) CHECK(fit.std_errors[j] > 0.0);
  for (std::size_t i = 1; i < fit.deviance_trace.size(); ++i) {
    CHECK(fit.deviance_trace[i] <= fit.deviance_trace[i - 1]);
  }
  CHECK(fit.deviance_trace.back() == doctest::Approx(-2.0 * fit.loglik).epsilon(1e-14));
  // The reported loglik is the likelihood at the reported estimates.
  const Design d = build_design(log, kModel);
  CHECK(loglik_glmm(d, fit.beta, fit.sigma_u, 9) == doctest::Approx(fit.loglik).epsilon(1e-12));
}

TEST_CASE("hitting max_iter is reported, not thrown") {
  const AnswerLog log = logistic_log(5, 0.8, 60, 40);
  FitOptions opts;
  opts.max_iter = 2;
  const GlmmFit fit = fit_glmm(log, kModel, opts);
  CHECK_FALSE(fit.converged);
  CHECK(fit.iterations == 2);
  CHECK(std::find(fit.warnings.begin(), fit.warnings.end(), "max_iter reached before convergence") != fit.warnings.end());
}

TEST_CASE("fits are deterministic and invariant to row order and student labels") {
  const AnswerLog log = logistic_log(6, 0.8, 80, 40);
  const GlmmFit a = fit_glmm(log, kModel);
  const GlmmFit again = fit_glmm(log, kModel);
  CHECK(a.beta == again.beta);
  CHECK(a.sigma_u == again.sigma_u);

  AnswerLog shuffled = log;
  Rng rng(6);
  rng.shuffle(std::span<AnswerRecord>(shuffled));
  const GlmmFit b = fit_glmm(shuffled, kModel);
  CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(std::abs(a.sigma_u - b.sigma_u) < 1e-8);
  CHECK(std::abs(a.loglik - b.loglik) < 1e-8);

  // Relabel students 1..n as 1000 - id (reverses group order).
  AnswerLog relabelled = log;
  for (auto& r : relabelled) r.student_id = 1000 - r.student_id;
  const GlmmFit c = fit_glmm(relabelled, kModel);
  CHECK((a.beta - c.beta).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(std::abs(a.sigma_u - c.sigma_u) < 1e-8);
  CHECK(std::abs(a.loglik - c.loglik) < 1e-8);
}

TEST_CASE("serial and parallel fits are identical") {
  const AnswerLog log = logistic_log(7, 0.8, 60, 40);
  FitOptions serial;
  serial.exec = Exec::Serial;
  const GlmmFit a = fit_glmm(log, kModel, serial);
  const GlmmFit b = fit_glmm(log, kModel);
  CHECK(a.beta == b.beta);
  CHECK(a.sigma_u == b.sigma_u);
  CHECK(a.loglik == b.loglik);
}

TEST_CASE("a different reference coding gives the same probabilities") {
  const AnswerLog log = logistic_log(8, 0.8, 80, 40);
  // Renumber headers so a different header becomes the reference level.
  AnswerLog recoded = log;
  for (auto& r : recoded) r.header_id = 5 - r.header_id;
  const GlmmFit a = fit_glmm(log, kModel);
  const GlmmFit b = fit_glmm(recoded, kModel);
  for (const char* level : {"1", "2", "3"}) {
    CHECK(predict_prob(a, level) == doctest::Approx(predict_prob(b, level)).epsilon(1e-6));
  }
  CHECK(a.loglik == doctest::Approx(b.loglik).epsilon(1e-10));
}

TEST_CASE("predict_prob modes and ordering") {
  const AnswerLog log = logistic_log(9, 0.9, 100, 50);
  const GlmmFit fit = fit_glmm(log, kModel);
  const double t1 = predict_prob(fit, "1"), t3 = predict_prob(fit, "3");
  const double p1 = predict_prob(fit, "1", PredictionMode::PopulationAveraged);
  const double p3 = predict_prob(fit, "3", PredictionMode::PopulationAveraged);
  // beta for level 1 is the reference (0); level 3 is generated lower.
  REQUIRE(fit.beta[2] < 0.0);
  CHECK(t1 > t3);
  CHECK(p1 > p3);
  // Averaging over u pulls probabilities toward one half.
  CHECK(p1 < t1);
  for (double v : {t1, t3, p1, p3}) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS_AS(predict_prob(fit, "7"), ConfigError);

  FitOptions zero;
  zero.fix_sigma_zero = true;
  const GlmmFit z = fit_glmm(log, kModel, zero);
  CHECK(std::abs(predict_prob(z, "2") - predict_prob(z, "2", PredictionMode::PopulationAveraged)) < 1e-10);
  CHECK(parse_prediction_mode(to_string(PredictionMode::PopulationAveraged)) == PredictionMode::PopulationAveraged);
}

TEST_CASE("likelihood-ratio tests") {
  const AnswerLog log = logistic_log(10, 0.8, 100, 50);
  const GlmmFit full = fit_glmm(log, kModel);
  SUBCASE("identical fits") {
    const LrtResult t = lrt(full, full);
    CHECK(t.statistic == 0.0);
    CHECK(t.df == 0);
    CHECK(t.p_value == 1.0);
  }
  SUBCASE("dropping a factor") {
    const GlmmFit reduced = fit_glmm(log, {"r", "is_correct", {"header_id"}, "student_id"});
    const LrtResult t = lrt(full, reduced);
    CHECK(t.df == 2);
    CHECK(t.statistic == doctest::Approx(2.0 * (full.loglik - reduced.loglik)).epsilon(1e-12));
    CHECK(t.p_value == doctest::Approx(oracle::chi_square_sf(t.statistic, 2)).epsilon(1e-8));
    CHECK_FALSE(t.boundary_corrected);
    CHECK(t.p_value < 0.001);
  }
  SUBCASE("dropping the student effect") {
    FitOptions zero;
    zero.fix_sigma_zero = true;
    const GlmmFit reduced = fit_glmm(log, kModel, zero);
    const LrtResult t = lrt(full, reduced);
    CHECK(t.df == 1);
    CHECK(t.boundary_corrected);
    CHECK(t.p_value == doctest::Approx(0.5 * oracle::chi_square_sf(t.statistic, 1)).epsilon(1e-8));
    CHECK_THROWS_AS(lrt(reduced, full), ConfigError);
  }
  SUBCASE("non-nested or different data") {
    const GlmmFit other = fit_glmm(logistic_log(11, 0.8, 50, 50), kModel);
    CHECK_THROWS_AS(lrt(full, other), ConfigError);
    GlmmFit foreign = full;
    foreign.column_names.back() = "kind=NOTA_PLUS";
    CHECK_THROWS_AS(lrt(full, foreign), ConfigError);
  }
}

TEST_CASE("chi-square upper tail") {
  for (int df : {1, 2, 6, 14}) {
    for (double x : {0.1, 1.0, 5.0, 20.0, 60.0}) {
      CHECK(chi_square_upper(x, df) == doctest::Approx(oracle::chi_square_sf(x, df)).epsilon(1e-10));
    }
  }
  CHECK(chi_square_upper(0.0, 3) == 1.0);
  CHECK(chi_square_upper(2.0, 0) == 0.0);
}

TEST_CASE("separation is flagged") {
  AnswerLog log = logistic_log(12, 0.5, 40, 30);
  for (auto& r : log) {
    if (r.n_distractors == 1) r.is_correct = true;
  }
  FitOptions opts;
  opts.max_iter = 60;
  const GlmmFit fit = fit_glmm(log, kModel, opts);
  CHECK(std::any_of(fit.warnings.begin(), fit.warnings.end(),
                    [](const std::string& w) { return w.find("separation") != std::string::npos; }));
}

TEST_CASE("naive proportions") {
  AnswerLog log;
  for (int i = 0; i < 10; ++i) log.push_back({1 + i % 2, 1 + i % 3, 1, 2, ItemKind::Plain, 0, i != 0, i});
  log.push_back({1, 9, 1, 5, ItemKind::Plain, 0, false, 20});
  const auto rows = naive_proportions(log, "n_distractors");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].level == "2");
  CHECK(rows[0].n_answers == 10);
  CHECK(rows[0].n_items == 3);
  CHECK(rows[0].proportion == doctest::Approx(0.9));
  CHECK(rows[1].proportion == 0.0);
  CHECK(naive_proportions(AnswerLog{}, "kind").empty());
}

TEST_CASE("pure guessing on 3-distractor items gives about one quarter") {
  BankSpec s;
  s.items_per_header = 200;
  s.distractor_min = s.distractor_max = 3;
  s.seed = 13;
  const Bank bank = generate_bank(s, fixture::headers(2));
  CohortSpec c;
  c.regime = Regime::Mixture;
  c.f_guessing = 1.0;
  c.n_students = 50;
  c.answers_per_student = {200, 200};
  const auto rows = naive_proportions(simulate_cohort(c, bank.items), "n_distractors");
  REQUIRE(rows.size() == 1);
  const double se = std::sqrt(0.25 * 0.75 / static_cast<double>(rows[0].n_answers));
  CHECK(std::abs(rows[0].proportion - 0.25) < 3.0 * se);
}

TEST_CASE("fit JSON round-trip") {
  const AnswerLog log = logistic_log(14, 0.8, 40, 30);
  const GlmmFit fit = fit_glmm(log, kModel);
  const auto doc = to_json(fit);
  CHECK(doc.at("coefficients").size() == static_cast<std::size_t>(fit.beta.size()));
  CHECK(doc.at("coefficients")[0].at("name") == "(Intercept)");
  const GlmmFit back = glmm_fit_from_json(nlohmann::json::parse(doc.dump()));
  CHECK(back.beta == fit.beta);
  CHECK(back.sigma_u == fit.sigma_u);
  CHECK(back.loglik == fit.loglik);
  CHECK(back.converged == fit.converged);
  CHECK(predict_prob(back, "2") == predict_prob(fit, "2"));
  CHECK(to_json(back).dump() == doc.dump());
}
