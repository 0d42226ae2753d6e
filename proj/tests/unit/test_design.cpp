#include <doctest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "mcqlab/design.hpp"
#include "mcqlab/errors.hpp"
#include "mcqlab/question_bank.hpp"

using namespace mcqlab;

namespace {

AnswerLog paper_like_log(std::uint64_t seed) {
  BankSpec s;
  s.items_per_header = 100;
  s.kind_weights = {0.5, 0.125, 0.125, 0.125, 0.125};
  s.poisson_lambda = 5.0;
  s.seed = seed;
  const Bank bank = generate_bank(s, fixture::headers(15));
  CohortSpec c;
  c.n_students = 30;
  c.regime = Regime::Mixture;
  c.f_guessing = 0.5;
  c.answers_per_student = {300, 300};
  c.seed = seed;
  return simulate_cohort(c, bank.items);
}

}  // namespace

TEST_CASE("level sorting") {
  std::vector<std::string> numeric = {"10", "2", "1"};
  sort_levels(numeric);
  CHECK(numeric == std::vector<std::string>{"1", "2", "10"});
  std::vector<std::string> names = {"PLAIN", "AOTA_MINUS", "NOTA_PLUS"};
  sort_levels(names);
  CHECK(names == std::vector<std::string>{"AOTA_MINUS", "NOTA_PLUS", "PLAIN"});
}

TEST_CASE("model spec validation") {
  ModelSpec ok{"m", "is_correct", {"n_distractors", "header_id"}, "student_id"};
  CHECK_NOTHROW(ok.validate());
  ModelSpec bad_factor = ok;
  bad_factor.fixed_factors.push_back("colour");
  CHECK_THROWS_AS(bad_factor.validate(), ConfigError);
  ModelSpec twice = ok;
  twice.fixed_factors.push_back("header_id");
  CHECK_THROWS_AS(twice.validate(), ConfigError);
  ModelSpec bad_response = ok;
  bad_response.response = "selected_index";
  CHECK_THROWS_AS(bad_response.validate(), ConfigError);
  CHECK(to_json(model_spec_from_json(to_json(ok))).dump() == to_json(ok).dump());
}

TEST_CASE("dummy coding of model 1 and model 2 designs") {
  const AnswerLog log = paper_like_log(3);
  AnswerLog plain;
  std::copy_if(log.begin(), log.end(), std::back_inserter(plain), [](const auto& r) { return r.kind == ItemKind::Plain; });

  const Design d1 = build_design(plain, {"m1", "is_correct", {"n_distractors"}, "student_id"});
  CHECK(d1.n_cols() == 7);
  CHECK(d1.factors.front().levels.front() == "1");
  CHECK(d1.factors.front().column.front() == -1);
  CHECK(d1.column_names.front() == "(Intercept)");
  CHECK(d1.column_names[1] == "n_distractors=2");

  AnswerLog four;
  std::copy_if(log.begin(), log.end(), std::back_inserter(four), [](const auto& r) { return r.n_distractors == 3; });
  const Design d2 = build_design(four, {"m2", "is_correct", {"kind", "header_id"}, "student_id"});
  CHECK(d2.n_cols() == 19);
  CHECK(d2.factors[0].levels.size() == 5);
  CHECK(d2.factors[1].levels.size() == 15);
  CHECK(d2.n_groups() == 30);

  long long total = 0;
  for (auto c : d2.factors[0].counts) total += c;
  CHECK(total == static_cast<long long>(four.size()));
  long long combos = 0;
  for (const auto& c : d2.combos) combos += c.count;
  CHECK(combos == total);

  // Each row has an intercept and at most one dummy per factor.
  for (Eigen::Index i = 0; i < d2.X.rows(); ++i) {
    CHECK(d2.X(i, 0) == 1.0);
    CHECK(d2.X.row(i).sum() <= 3.0);
  }
}

TEST_CASE("groups are contiguous and rows canonical regardless of input order") {
  AnswerLog log = paper_like_log(4);
  const ModelSpec spec{"m", "is_correct", {"n_distractors", "header_id"}, "student_id"};
  const Design a = build_design(log, spec);
  Rng rng(1);
  rng.shuffle(std::span<AnswerRecord>(log));
  const Design b = build_design(log, spec);
  CHECK(a.X == b.X);
  CHECK(a.y == b.y);
  CHECK(a.group_start == b.group_start);
  CHECK(a.group_start.back() == a.n_obs());
}

TEST_CASE("single-level factor is rejected by name") {
  AnswerLog log = {{1, 1, 1, 2, ItemKind::Plain, 0, true, 1}, {1, 2, 1, 2, ItemKind::Plain, 1, false, 2}};
  try {
    build_design(log, {"m", "is_correct", {"n_distractors"}, "student_id"});
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("n_distractors") != std::string::npos);
  }
  CHECK_THROWS_AS(build_design(AnswerLog{}, {"m", "is_correct", {"n_distractors"}, "student_id"}), ConfigError);
}

TEST_CASE("intercept-only design") {
  AnswerLog log = {{1, 1, 1, 2, ItemKind::Plain, 0, true, 1}, {2, 2, 1, 2, ItemKind::Plain, 1, false, 1}};
  const Design d = build_design(log, {"m", "is_correct", {}, "student_id"});
  CHECK(d.n_cols() == 1);
  CHECK(d.n_groups() == 2);
}
