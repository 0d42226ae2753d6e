#pragma once

// Student cohorts answering a generated bank. Two generating regimes:
//  - Mixture: guessers pick uniformly among all options, informed students
//    are always correct.
//  - Logistic: P(correct) = invlogit(beta0 + level effect + header effect +
//    ability); wrong answers fall uniformly on the distractors.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcqlab/question_bank.hpp"
#include "mcqlab/rng.hpp"

namespace mcqlab {

enum class Regime { Mixture, Logistic };
enum class GuesserAssignment {
  Bernoulli,   // each student independently with probability f_guessing
  FixedCount,  // exactly round(n_students * f_guessing) guessers, chosen at random
};

struct StudentProfile {
  int student_id = 0;
  double ability = 0.0;
  bool is_guesser = false;

  bool operator==(const StudentProfile&) const = default;
};

// Per-student answer count, uniform on [min, max]; min == max is a fixed count.
struct AnswerCount {
  int min = 236;
  int max = 236;

  bool fixed() const noexcept { return min == max; }
  bool operator==(const AnswerCount&) const = default;
};

struct CohortSpec {
  int n_students = 271;
  double f_guessing = 0.0;
  double sigma_u = 0.0;
  double beta0 = 0.0;
  // Keyed by level label: plain items use their distractor count ("1".."7"),
  // special items their kind name ("NOTA_PLUS", ...).
  std::map<std::string, double> level_effects;
  std::map<int, double> header_effects;
  AnswerCount answers_per_student;
  Regime regime = Regime::Logistic;
  GuesserAssignment guesser_assignment = GuesserAssignment::Bernoulli;
  int min_answers_exclusion = 40;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AnswerRecord {
  int student_id = 0;
  int item_id = 0;
  int header_id = 0;
  int n_distractors = 0;
  ItemKind kind = ItemKind::Plain;
  int selected_index = 0;
  bool is_correct = false;
  int sequence_no = 0;

  int option_count() const noexcept { return n_distractors + 1; }
  bool operator==(const AnswerRecord&) const = default;
};

using AnswerLog = std::vector<AnswerRecord>;

// The logistic-regime level key of an item.
std::string level_key(ItemKind kind, int n_distractors);
inline std::string level_key(const Item& item) { return level_key(item.kind, item.n_distractors); }

std::vector<StudentProfile> build_cohort(const CohortSpec& spec, Rng& rng);

// Probability that this student answers this item correctly.
double correct_probability(const StudentProfile& student, const Item& item, const CohortSpec& spec);

// One response. sequence_no is left 0 for the caller.
AnswerRecord simulate_answer(const StudentProfile& student, const Item& item, const CohortSpec& spec,
                             Rng& rng);

// Full simulation from spec.seed: profiles, then per student an answer count
// and that many distinct items drawn uniformly from the bank. Students are
// simulated in parallel on derived streams; output is sorted by
// (student_id, sequence_no).
AnswerLog simulate_cohort(const CohortSpec& spec, std::span<const Item> bank);

// As simulate_cohort but for a fixed assignment of (student index, bank
// index) pairs, answered in the listed order per student. Used to reproduce
// exact per-level answer counts.
AnswerLog simulate_assigned(const CohortSpec& spec, std::span<const StudentProfile> students,
                            std::span<const Item> bank,
                            std::span<const std::pair<std::size_t, std::size_t>> assignment);

// Keeps exactly the records of students with at least min_answers records.
AnswerLog apply_exclusion(std::span<const AnswerRecord> log, int min_answers);

// Per-level effect e such that sum_h w_h * invlogit(beta0 + e + header_h)
// equals target. Weights need not be normalized.
double calibrate_level_effect(double target, double beta0, std::span<const double> header_effects,
                              std::span<const double> header_weights);

// CSV: student_id,item_id,header_id,n_distractors,kind,selected_index,is_correct,sequence_no
inline constexpr std::string_view kAnswerCsvHeader =
    "student_id,item_id,header_id,n_distractors,kind,selected_index,is_correct,sequence_no";
void write_answers_csv(std::ostream& out, std::span<const AnswerRecord> log);
void write_answers_csv(const std::string& path, std::span<const AnswerRecord> log);

nlohmann::json to_json(const CohortSpec& spec);
CohortSpec cohort_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const StudentProfile& p);

}  // namespace mcqlab
