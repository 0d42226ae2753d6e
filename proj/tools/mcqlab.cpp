// Command-line front end. Each subcommand reads and writes the artifact files
// in --out, so `generate`, `simulate`, `fit`, `guessers`, `report` chained on
// one directory give the same files as `replicate`.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcqlab/glmm_kernel.hpp"
#include "mcqlab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mcqlab;

namespace {

constexpr int kExitError = 1;
constexpr int kExitNotConverged = 2;

struct Common {
  std::string config = "configs/paper_shape.json";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> quadrature;
  std::optional<std::string> mode;
  std::optional<int> min_answers;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->capture_default_str();
  cmd->add_option("--seed", c.seed, "master seed, overrides the config");
  cmd->add_option("--out", c.out, "output directory, overrides the config");
  cmd->add_option("--quadrature", c.quadrature, "Gauss-Hermite nodes per student")->check(CLI::Range(1, 200));
  cmd->add_option("--mode", c.mode, "prediction mode")->check(CLI::IsMember({"typical", "population"}));
  cmd->add_option("--min-answers", c.min_answers, "exclude students with fewer answers")->check(CLI::NonNegativeNumber);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig config = load_config(c.config);
  if (c.seed) apply_master_seed(config, *c.seed);
  if (c.out) config.out_dir = *c.out;
  if (c.quadrature) config.fit.quadrature = *c.quadrature;
  if (c.mode) config.mode = parse_prediction_mode(*c.mode);
  if (c.min_answers) config.cohort.min_answers_exclusion = *c.min_answers;
  config.validate();
  fs::create_directories(config.out_dir);
  return config;
}

std::string input_path(const std::string& flag_value, const ExperimentConfig& config, const char* artifact_name) {
  return flag_value.empty() ? (fs::path(config.out_dir) / artifact_name).string() : flag_value;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, 0, "", e.what());
  }
}

void write_json(const std::string& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << doc.dump(2) << '\n';
}

int exit_for(bool converged) {
  if (converged) return 0;
  std::cerr << "mcqlab: at least one model did not converge\n";
  return kExitNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("MCQLAB_THREADS")) {
    try {
      set_thread_limit(std::stoi(env));
    } catch (const std::exception&) {
      std::cerr << "mcqlab: ignoring MCQLAB_THREADS=" << env << '\n';
    }
  }

  CLI::App app{"Multiple-choice item study: generate, simulate, fit, report"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Common common;
  std::string bank_path, answers_path, fits_path, guess_path, from_path;

  auto* generate = app.add_subcommand("generate", "generate the question bank (bank.json)");
  add_common(generate, common);

  auto* simulate = app.add_subcommand("simulate", "simulate the cohort (answers.csv, cohort.json)");
  add_common(simulate, common);
  simulate->add_option("--bank", bank_path, "bank file (default: <out>/bank.json)");

  auto* fit = app.add_subcommand("fit", "fit the configured models (fits.json)");
  add_common(fit, common);
  fit->add_option("--answers", answers_path, "answer log CSV (default: <out>/answers.csv)");

  auto* guessers = app.add_subcommand("guessers", "estimate the guessing fraction (guess.json)");
  add_common(guessers, common);
  guessers->add_option("--answers", answers_path, "answer log CSV (default: <out>/answers.csv)");
  guessers->add_option("--fits", fits_path, "fits file (default: <out>/fits.json)");

  auto* report = app.add_subcommand("report", "assemble report_<seed>.json and report_<seed>.txt");
  add_common(report, common);
  report->add_option("--bank", bank_path, "bank file (default: <out>/bank.json)");
  report->add_option("--answers", answers_path, "answer log CSV (default: <out>/answers.csv)");
  report->add_option("--fits", fits_path, "fits file (default: <out>/fits.json)");
  report->add_option("--guess", guess_path, "guessing file (default: <out>/guess.json)");
  report->add_option("--from", from_path, "re-render the text tables of an existing report JSON to stdout");

  auto* replicate = app.add_subcommand("replicate", "run every stage end to end");
  add_common(replicate, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*report && !from_path.empty()) {
      std::cout << render_text(report_from_json(read_json(from_path)));
      return 0;
    }

    const ExperimentConfig config = resolve(common);
    const fs::path out(config.out_dir);

    if (*generate) {
      const Bank bank = stage_generate(config);
      write_json((out / artifact::kBank).string(), to_json(bank));
      std::cout << "wrote " << bank.items.size() << " items to " << (out / artifact::kBank).string() << '\n';
      return 0;
    }

    if (*simulate) {
      const Bank bank = bank_from_json(read_json(input_path(bank_path, config, artifact::kBank)));
      const AnswerLog log = stage_simulate(config, bank);
      write_answers_csv((out / artifact::kAnswers).string(), log);
      Rng profile_rng(derive_seed(config.cohort.seed, stream::kProfiles));
      nlohmann::json students = nlohmann::json::array();
      for (const auto& s : build_cohort(config.cohort, profile_rng)) students.push_back(to_json(s));
      write_json((out / artifact::kCohort).string(), {{"spec", to_json(config.cohort)}, {"students", students}});
      std::cout << "wrote " << log.size() << " answers to " << (out / artifact::kAnswers).string() << '\n';
      return 0;
    }

    if (*fit) {
      const IngestedLog ingested = ingest_csv(input_path(answers_path, config, artifact::kAnswers));
      const auto models = stage_fit(config, ingested.log);
      write_json((out / artifact::kFits).string(), fits_to_json(models));
      bool converged = true;
      for (const auto& m : models) {
        std::cout << m.fit.spec.name << ": loglik " << m.fit.loglik << ", sigma_u " << m.fit.sigma_u
                  << (m.fit.converged ? "" : " (NOT CONVERGED)") << '\n';
        converged = converged && m.fit.converged;
      }
      return exit_for(converged);
    }

    if (*guessers) {
      const IngestedLog ingested = ingest_csv(input_path(answers_path, config, artifact::kAnswers));
      const auto models = fits_from_json(read_json(input_path(fits_path, config, artifact::kFits)));
      const AnswerLog analysed = apply_exclusion(ingested.log, config.cohort.min_answers_exclusion);
      const auto input = guess_input_from(config, models, analysed);
      std::optional<GuessEstimate> est;
      if (input) est = estimate_guessing_fraction(*input);
      write_json((out / artifact::kGuess).string(),
                 {{"input", input ? to_json(*input) : nlohmann::json(nullptr)},
                  {"estimate", est ? to_json(*est) : nlohmann::json(nullptr)}});
      if (est) {
        std::cout << "guessing fraction " << est->f << '\n';
      } else {
        std::cout << "guessing fraction not computed (no distractor-count model)\n";
      }
      return 0;
    }

    if (*report) {
      std::optional<BankManifest> manifest;
      const std::string bp = input_path(bank_path, config, artifact::kBank);
      if (fs::exists(bp)) manifest = bank_from_json(read_json(bp)).manifest;
      const IngestedLog ingested = ingest_csv(input_path(answers_path, config, artifact::kAnswers));
      std::vector<ModelResult> models;
      const std::string fp = input_path(fits_path, config, artifact::kFits);
      if (fs::exists(fp)) models = fits_from_json(read_json(fp));
      std::optional<GuessInput> input;
      std::optional<GuessEstimate> est;
      const std::string gp = input_path(guess_path, config, artifact::kGuess);
      if (fs::exists(gp)) {
        const auto doc = read_json(gp);
        if (!doc.at("input").is_null()) input = guess_input_from_json(doc.at("input"));
        if (!doc.at("estimate").is_null()) est = guess_estimate_from_json(doc.at("estimate"));
      }
      const StudyReport rep = stage_report(config, manifest, ingested.log, models, input, est);
      const auto [json_path, text_path] = emit_report(rep, config.out_dir);
      std::cout << "wrote " << json_path << " and " << text_path << '\n';
      return exit_for(!models.empty() && rep.all_converged());
    }

    if (*replicate) {
      const PipelineResult result = run_pipeline(config);
      std::cout << render_text(result.report);
      std::cout << "\nwrote " << result.report_json << " and " << result.report_text << '\n';
      return exit_for(result.ok);
    }
  } catch (const std::exception& e) {
    std::cerr << "mcqlab: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
