#pragma once

// Small builders shared by the unit and acceptance tests.

#include <string>
#include <vector>

#include "mcqlab/cohort_sim.hpp"
#include "mcqlab/question_bank.hpp"
#include "mcqlab/rng.hpp"

namespace fixture {

inline std::vector<mcqlab::HeaderTemplate> headers(int n, int n_correct = 4, int n_wrong = 9) {
  std::vector<mcqlab::HeaderTemplate> out;
  for (int h = 1; h <= n; ++h) {
    mcqlab::HeaderTemplate t;
    t.header_id = h;
    t.stem_text = "Stem " + std::to_string(h);
    for (int i = 0; i < n_correct; ++i) t.correct_pool.push_back("true " + std::to_string(h) + "/" + std::to_string(i));
    for (int i = 0; i < n_wrong; ++i) t.distractor_pool.push_back("false " + std::to_string(h) + "/" + std::to_string(i));
    out.push_back(t);
  }
  return out;
}

// Random small answer log: n_students with 1..max_answers answers on plain
// items with 1..3 distractors, outcomes drawn with the given correct rate.
inline mcqlab::AnswerLog small_log(mcqlab::Rng& rng, int n_students, int max_answers, double p = 0.7) {
  mcqlab::AnswerLog log;
  int item = 1;
  for (int s = 1; s <= n_students; ++s) {
    const int n = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(max_answers)));
    for (int j = 0; j < n; ++j) {
      mcqlab::AnswerRecord r;
      r.student_id = s;
      r.item_id = item++;
      r.header_id = 1 + static_cast<int>(rng.uniform_index(2));
      r.n_distractors = 1 + static_cast<int>(rng.uniform_index(3));
      r.is_correct = rng.uniform() < p;
      r.selected_index = r.is_correct ? 0 : 1;
      r.sequence_no = j;
      log.push_back(r);
    }
  }
  return log;
}

}  // namespace fixture
