// Serial reference vs OpenMP driver for the marginal log-likelihood and its
// gradient on a paper-scale design.

#include <benchmark/benchmark.h>

#include "mcqlab/cohort_sim.hpp"
#include "mcqlab/design.hpp"
#include "mcqlab/glmm_kernel.hpp"
#include "mcqlab/question_bank.hpp"

namespace {

using namespace mcqlab;

const Design& paper_scale_design() {
  static const Design design = [] {
    std::vector<HeaderTemplate> headers;
    for (int h = 1; h <= 15; ++h) {
      HeaderTemplate t;
      t.header_id = h;
      t.stem_text = "header " + std::to_string(h);
      for (int i = 0; i < 4; ++i) t.correct_pool.push_back("right " + std::to_string(h) + "." + std::to_string(i));
      for (int i = 0; i < 9; ++i) t.distractor_pool.push_back("wrong " + std::to_string(h) + "." + std::to_string(i));
      headers.push_back(t);
    }
    BankSpec bank_spec;
    bank_spec.items_per_header = 300;
    bank_spec.poisson_lambda = 6.0;
    bank_spec.seed = 11;
    const Bank bank = generate_bank(bank_spec, headers);

    CohortSpec cohort;
    cohort.n_students = 271;
    cohort.sigma_u = 0.8;
    cohort.beta0 = 1.8;
    cohort.answers_per_student = {236, 236};
    cohort.seed = 12;
    for (int k = 1; k <= 7; ++k) cohort.level_effects[std::to_string(k)] = -0.1 * (k - 1);
    for (int h = 1; h <= 15; ++h) cohort.header_effects[h] = 0.03 * (h - 8);
    const AnswerLog log = simulate_cohort(cohort, bank.items);
    return build_design(log, {"bench", "is_correct", {"n_distractors", "header_id"}, "student_id"});
  }();
  return design;
}

Eigen::VectorXd start_beta(const Design& d) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.n_cols()));
  beta[0] = 1.8;
  return beta;
}

void run(benchmark::State& state, Exec exec, bool gradient) {
  const Design& d = paper_scale_design();
  const Eigen::VectorXd beta = start_beta(d);
  const int order = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_glmm(d, beta, std::log(0.8), order, gradient, exec));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(d.y.size()));
}

void BM_LoglikSerial(benchmark::State& s) { run(s, Exec::Serial, false); }
void BM_LoglikParallel(benchmark::State& s) { run(s, Exec::Parallel, false); }
void BM_GradientSerial(benchmark::State& s) { run(s, Exec::Serial, true); }
void BM_GradientParallel(benchmark::State& s) { run(s, Exec::Parallel, true); }

BENCHMARK(BM_LoglikSerial)->Arg(1)->Arg(9)->Arg(25)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LoglikParallel)->Arg(1)->Arg(9)->Arg(25)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientSerial)->Arg(9)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientParallel)->Arg(9)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
