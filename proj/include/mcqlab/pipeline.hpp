#pragma once

// End-to-end study on synthetic data: generate -> simulate -> exclude ->
// fit -> predict -> tests -> guessing fraction -> report. Each stage reads
// and writes documented files so stages can also run one at a time.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcqlab/cohort_sim.hpp"
#include "mcqlab/errors.hpp"
#include "mcqlab/glmm.hpp"
#include "mcqlab/guessing.hpp"
#include "mcqlab/ingest_report.hpp"
#include "mcqlab/question_bank.hpp"

namespace mcqlab {

inline constexpr std::string_view kToolVersion = MCQLAB_VERSION;

enum class GuessSource { Model, Naive };

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string headers_path;  // resolved against the config file's directory
  BankSpec bank;
  CohortSpec cohort;
  // Optional target typical probabilities per level key; when present they
  // replace cohort.level_effects via calibration against the header effects.
  std::map<std::string, double> level_targets;
  std::vector<ModelSpec> models;
  FitOptions fit;
  PredictionMode mode = PredictionMode::Typical;
  GuessSource guess_source = GuessSource::Model;
  std::string out_dir = "out";

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& doc, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& config);

// Sets the master seed and re-derives the bank and cohort seeds from it.
void apply_master_seed(ExperimentConfig& config, std::uint64_t seed);

// FNV-1a over the canonical config (output directory excluded) and header
// content, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config, const std::vector<HeaderTemplate>& headers);

// Fills cohort.level_effects from level_targets (equal header weights).
void calibrate_cohort(ExperimentConfig& config);

// Which slice of the log a model is fitted on, by its leading factor.
AnswerLog model_subset(std::span<const AnswerRecord> log, const ModelSpec& spec);

struct ModelResult {
  GlmmFit fit;
  std::vector<LrtResult> tests;
};

// Fits each configured model and its reduced variants (leading factor
// dropped, header factor dropped, sigma_u held at 0) for the tests.
std::vector<ModelResult> fit_models(const ExperimentConfig& config, std::span<const AnswerRecord> analysed);

// Per-level P(correct) for the guessing estimator, from the distractor model
// or from naive proportions.
std::optional<GuessInput> guess_input_from(const ExperimentConfig& config, std::span<const ModelResult> models,
                                           std::span<const AnswerRecord> analysed);

nlohmann::json fits_to_json(std::span<const ModelResult> models);
std::vector<ModelResult> fits_from_json(const nlohmann::json& doc);

// File names inside the output directory.
namespace artifact {
inline constexpr const char* kBank = "bank.json";
inline constexpr const char* kCohort = "cohort.json";
inline constexpr const char* kAnswers = "answers.csv";
inline constexpr const char* kFits = "fits.json";
inline constexpr const char* kGuess = "guess.json";
}  // namespace artifact

// Stage entry points shared by the CLI and run_pipeline.
Bank stage_generate(const ExperimentConfig& config);
AnswerLog stage_simulate(const ExperimentConfig& config, const Bank& bank);
std::vector<ModelResult> stage_fit(const ExperimentConfig& config, std::span<const AnswerRecord> raw_log);
std::optional<GuessEstimate> stage_guessers(const ExperimentConfig& config, std::span<const ModelResult> models,
                                            std::span<const AnswerRecord> raw_log);
StudyReport stage_report(const ExperimentConfig& config, const std::optional<BankManifest>& manifest,
                         std::span<const AnswerRecord> raw_log, std::span<const ModelResult> models,
                         const std::optional<GuessInput>& guess_input,
                         const std::optional<GuessEstimate>& guess);

struct PipelineResult {
  StudyReport report;
  std::string report_json;
  std::string report_text;
  bool ok = false;  // no stage failed and every model converged
};

// Runs every stage, writing each artifact into config.out_dir. A failing
// stage throws StageError naming the stage; files already written stay on
// disk next to a FAILED marker.
PipelineResult run_pipeline(const ExperimentConfig& config);

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace mcqlab
