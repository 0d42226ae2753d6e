#pragma once

// Answer-log ingestion and the study report: item/answer tallies, naive vs
// model probability tables, significance tests, the guessing fraction and
// grade-scale gaps, rendered as JSON (full precision) and aligned text
// (two decimals, half-even).

#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcqlab/cohort_sim.hpp"
#include "mcqlab/glmm.hpp"
#include "mcqlab/guessing.hpp"
#include "mcqlab/question_bank.hpp"

namespace mcqlab {

struct IngestSummary {
  std::size_t rows = 0;
  std::size_t students = 0;
  std::size_t items = 0;
};

struct IngestedLog {
  AnswerLog log;
  IngestSummary summary;
};

// Parses and validates an answer-log CSV. The first bad row raises a
// ParseError carrying its line number and column.
IngestedLog ingest_csv(const std::string& path);
IngestedLog ingest_csv(std::istream& in, const std::string& source_name);

struct CountRow {
  std::string level;
  long long n_items = 0;
  long long n_answers = 0;

  bool operator==(const CountRow&) const = default;
};

std::vector<CountRow> summarize_counts(std::span<const AnswerRecord> log, std::string_view factor);

// Distractor analysis: plain items only.
AnswerLog distractor_subset(std::span<const AnswerRecord> log);
// NOTA/AOTA analysis: four-option items only (special kinds plus plain items
// with three distractors).
AnswerLog nota_aota_subset(std::span<const AnswerRecord> log);

struct ProbabilityRow {
  std::string level;
  long long n_items = 0;
  long long n_answers = 0;
  double naive = 0.0;
  std::optional<double> model;
};

struct GradeDiff {
  std::string name;
  std::string level_high;
  std::string level_low;
  double p_high = 0.0;
  double p_low = 0.0;
  double grade_points = 0.0;
};

struct CohortSummary {
  long long students_before = 0;
  long long students_after = 0;
  long long answers_before = 0;
  long long answers_after = 0;
  int min_answers = 0;
};

struct ModelStatus {
  std::string name;
  bool converged = false;
  int iterations = 0;
  double sigma_u = 0.0;
  double loglik = 0.0;
  std::vector<std::string> warnings;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string tool_version;
};

struct StudyReport {
  int schema_version = 1;
  std::optional<BankManifest> bank_manifest;
  CohortSummary cohort;
  std::vector<CountRow> table1;
  std::vector<CountRow> table2;
  std::vector<ProbabilityRow> table3;
  std::vector<ProbabilityRow> table4;
  std::string prediction_mode = "typical";
  std::vector<ModelStatus> models;
  std::vector<LrtResult> tests;
  std::optional<GuessInput> guess_input;
  std::optional<GuessEstimate> guess_estimate;
  std::vector<GradeDiff> grade_diffs;
  Provenance provenance;

  bool all_converged() const;
};

// Everything the report is assembled from; missing pieces are rendered as
// "not computed".
struct ReportInputs {
  std::optional<BankManifest> bank_manifest;
  std::span<const AnswerRecord> raw_log;
  std::span<const AnswerRecord> analysed_log;
  int min_answers = 0;
  const GlmmFit* distractor_fit = nullptr;
  const GlmmFit* kind_fit = nullptr;
  std::vector<LrtResult> tests;
  std::optional<GuessInput> guess_input;
  std::optional<GuessEstimate> guess_estimate;
  PredictionMode mode = PredictionMode::Typical;
  Provenance provenance;
};

StudyReport build_report(const ReportInputs& in);

// Half-even rounding to two decimals, as text.
std::string format_2dp(double value);

std::string render_text(const StudyReport& report);
nlohmann::json to_json(const StudyReport& report);
StudyReport report_from_json(const nlohmann::json& doc);

// Writes report_<seed>.json and report_<seed>.txt under dir; returns the two paths.
std::pair<std::string, std::string> emit_report(const StudyReport& report, const std::string& dir);

}  // namespace mcqlab
