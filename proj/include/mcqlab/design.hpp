#pragma once

// Reference-coded design matrices for a random-intercept logistic model.

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mcqlab/cohort_sim.hpp"

namespace mcqlab {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Factors that can be read off an AnswerRecord.
bool is_known_factor(std::string_view name) noexcept;
std::string factor_label(const AnswerRecord& rec, std::string_view factor);

// Ascending level order: numeric when every label is an integer, otherwise
// lexicographic.
void sort_levels(std::vector<std::string>& labels);
bool level_less(const std::string& a, const std::string& b, bool numeric);

struct ModelSpec {
  std::string name = "model";
  std::string response = "is_correct";
  // Empty = intercept only (used for reduced models in tests).
  std::vector<std::string> fixed_factors;
  std::string group_factor = "student_id";

  void validate() const;
};

struct FactorCoding {
  std::string name;
  std::vector<std::string> levels;  // ascending; levels[0] is the reference
  std::vector<int> column;          // design column per level, -1 for the reference
  std::vector<long long> counts;    // observations per level
  std::vector<long long> successes; // correct responses per level

  // -1 when the level was not observed.
  int index_of(std::string_view level) const;
};

// Observed combinations of the non-leading factors' levels with their
// counts; prediction averages over these.
struct LevelCombo {
  std::vector<int> levels;
  long long count = 0;
};

struct Design {
  Eigen::VectorXd y;
  RowMatrix X;  // column 0 is the intercept
  // Observations are sorted by group; group g owns rows [group_start[g], group_start[g+1]).
  std::vector<std::size_t> group_start;
  std::vector<std::string> group_labels;
  std::vector<std::string> column_names;
  std::vector<FactorCoding> factors;
  std::vector<LevelCombo> combos;

  std::size_t n_obs() const noexcept { return static_cast<std::size_t>(y.size()); }
  std::size_t n_groups() const noexcept { return group_labels.size(); }
  std::size_t n_cols() const noexcept { return static_cast<std::size_t>(X.cols()); }
};

// Rows are put in canonical order (group, student, item, sequence), so any
// permutation of the input log yields the same design.
Design build_design(std::span<const AnswerRecord> log, const ModelSpec& spec);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const FactorCoding& f);
FactorCoding factor_coding_from_json(const nlohmann::json& doc);

}  // namespace mcqlab
