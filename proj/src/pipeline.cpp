#include "mcqlab/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mcqlab/errors.hpp"

namespace mcqlab {

namespace {

const ModelResult* find_model(std::span<const ModelResult> models, std::string_view leading) {
  for (const auto& m : models) {
    if (!m.fit.spec.fixed_factors.empty() && m.fit.spec.fixed_factors.front() == leading) return &m;
  }
  return nullptr;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename F>
auto run_stage(const std::string& stage, const std::filesystem::path& out_dir, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const std::exception& e) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    std::ofstream marker(out_dir / "FAILED", std::ios::binary);
    marker << "stage: " << stage << "\nerror: " << e.what() << "\npartial artifacts in this directory are incomplete\n";
    throw StageError(stage, e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  bank.validate();
  cohort.validate();
  if (headers_path.empty()) throw ConfigError("config: headers path is required");
  if (models.empty()) throw ConfigError("config: at least one model is required");
  std::set<std::string> names;
  for (const auto& m : models) {
    m.validate();
    if (m.fixed_factors.empty()) throw ConfigError("config: model " + m.name + " has no fixed factors");
    if (!names.insert(m.name).second) throw ConfigError("config: duplicate model name " + m.name);
  }
  if (fit.quadrature < 1) throw ConfigError("config: quadrature must be >= 1");
  if (fit.max_iter < 1) throw ConfigError("config: max_iter must be >= 1");
  for (const auto& [key, p] : level_targets) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("config: level target for '" + key + "' must lie in (0, 1)");
  }
}

void apply_master_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.bank.seed = derive_seed(seed, stream::kBank);
  config.cohort.seed = derive_seed(seed, stream::kCohort);
}

void calibrate_cohort(ExperimentConfig& config) {
  if (config.level_targets.empty()) return;
  std::vector<double> effects;
  for (const auto& [id, e] : config.cohort.header_effects) effects.push_back(e);
  const std::vector<double> weights(effects.size(), 1.0);
  for (const auto& [key, target] : config.level_targets) {
    config.cohort.level_effects[key] = calibrate_level_effect(target, config.cohort.beta0, effects, weights);
  }
}

ExperimentConfig config_from_json(const nlohmann::json& doc, const std::string& base_dir) {
  ExperimentConfig c;
  try {
    const auto seed = doc.value("seed", std::uint64_t{42});
    std::string headers = doc.at("headers").get<std::string>();
    std::filesystem::path hp(headers);
    c.headers_path = hp.is_absolute() ? headers : (std::filesystem::path(base_dir) / hp).lexically_normal().string();
    if (doc.contains("bank")) c.bank = bank_spec_from_json(doc.at("bank"));
    if (doc.contains("cohort")) c.cohort = cohort_spec_from_json(doc.at("cohort"));
    if (doc.contains("level_targets")) {
      c.level_targets = doc.at("level_targets").get<std::map<std::string, double>>();
    }
    if (doc.contains("models")) {
      for (const auto& m : doc.at("models")) c.models.push_back(model_spec_from_json(m));
    } else {
      c.models.push_back({"model1", "is_correct", {"n_distractors", "header_id"}, "student_id"});
      c.models.push_back({"model2", "is_correct", {"kind", "header_id"}, "student_id"});
    }
    if (doc.contains("fit")) {
      const auto& f = doc.at("fit");
      c.fit.quadrature = f.value("quadrature", c.fit.quadrature);
      c.fit.max_iter = f.value("max_iter", c.fit.max_iter);
      c.fit.grad_tol = f.value("grad_tol", c.fit.grad_tol);
      c.fit.dev_tol = f.value("dev_tol", c.fit.dev_tol);
    }
    c.mode = parse_prediction_mode(doc.value("mode", std::string("typical")));
    const auto source = doc.value("guess_source", std::string("model"));
    if (source == "model") {
      c.guess_source = GuessSource::Model;
    } else if (source == "naive") {
      c.guess_source = GuessSource::Naive;
    } else {
      throw ConfigError("config: unknown guess_source '" + source + "'");
    }
    c.out_dir = doc.value("out_dir", c.out_dir);
    apply_master_seed(c, seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  calibrate_cohort(c);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(doc, std::filesystem::path(path).parent_path().string());
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json bank = to_json(c.bank);
  bank.erase("seed");
  nlohmann::json cohort = to_json(c.cohort);
  cohort.erase("seed");
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : c.models) models.push_back(to_json(m));
  nlohmann::json doc = {{"seed", c.seed},
                        {"headers", c.headers_path},
                        {"bank", bank},
                        {"cohort", cohort},
                        {"models", models},
                        {"fit",
                         {{"quadrature", c.fit.quadrature},
                          {"max_iter", c.fit.max_iter},
                          {"grad_tol", c.fit.grad_tol},
                          {"dev_tol", c.fit.dev_tol}}},
                        {"mode", std::string(to_string(c.mode))},
                        {"guess_source", c.guess_source == GuessSource::Model ? "model" : "naive"},
                        {"out_dir", c.out_dir}};
  if (!c.level_targets.empty()) doc["level_targets"] = c.level_targets;
  return doc;
}

std::string config_hash(const ExperimentConfig& config, const std::vector<HeaderTemplate>& headers) {
  nlohmann::json doc = to_json(config);
  doc.erase("out_dir");
  doc.erase("headers");
  std::uint64_t h = fnv1a(doc.dump());
  for (const auto& t : headers) {
    h = fnv1a(nlohmann::json{{"header_id", t.header_id},
                             {"stem_text", t.stem_text},
                             {"correct_pool", t.correct_pool},
                             {"distractor_pool", t.distractor_pool}}
                  .dump(),
              h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

AnswerLog model_subset(std::span<const AnswerRecord> log, const ModelSpec& spec) {
  if (!spec.fixed_factors.empty()) {
    if (spec.fixed_factors.front() == "n_distractors") return distractor_subset(log);
    if (spec.fixed_factors.front() == "kind") return nota_aota_subset(log);
  }
  return AnswerLog(log.begin(), log.end());
}

std::vector<ModelResult> fit_models(const ExperimentConfig& config, std::span<const AnswerRecord> analysed) {
  std::vector<ModelResult> out;
  for (const auto& spec : config.models) {
    const AnswerLog subset = model_subset(analysed, spec);
    ModelResult result;
    result.fit = fit_glmm(subset, spec, config.fit);

    auto reduced_test = [&](ModelSpec reduced_spec, bool drop_sigma, std::string label) {
      FitOptions opts = config.fit;
      opts.fix_sigma_zero = drop_sigma;
      opts.compute_std_errors = false;
      reduced_spec.name = spec.name + " without " + label;
      const GlmmFit reduced = fit_glmm(subset, reduced_spec, opts);
      LrtResult t = lrt(result.fit, reduced);
      t.name = spec.name + ": " + label;
      if (!reduced.converged) t.name += " (reduced fit not converged)";
      result.tests.push_back(t);
    };

    for (std::size_t f = 0; f < spec.fixed_factors.size(); ++f) {
      if (f != 0 && spec.fixed_factors[f] != "header_id") continue;
      ModelSpec reduced = spec;
      reduced.fixed_factors.erase(reduced.fixed_factors.begin() + static_cast<std::ptrdiff_t>(f));
      reduced_test(reduced, false, spec.fixed_factors[f]);
    }
    reduced_test(spec, true, spec.group_factor + " random intercept");
    out.push_back(std::move(result));
  }
  return out;
}

std::optional<GuessInput> guess_input_from(const ExperimentConfig& config, std::span<const ModelResult> models,
                                           std::span<const AnswerRecord> analysed) {
  GuessInput input;
  if (config.guess_source == GuessSource::Naive) {
    for (const auto& row : naive_proportions(distractor_subset(analysed), "n_distractors")) {
      input.levels.push_back(std::stoi(row.level));
      input.p_est.push_back(row.proportion);
    }
  } else {
    const ModelResult* m = find_model(models, "n_distractors");
    if (!m) return std::nullopt;
    for (const auto& level : m->fit.factors.front().levels) {
      input.levels.push_back(std::stoi(level));
      input.p_est.push_back(predict_prob(m->fit, level, config.mode));
    }
  }
  if (input.levels.empty()) return std::nullopt;
  return input;
}

nlohmann::json fits_to_json(std::span<const ModelResult> models) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : models) {
    nlohmann::json entry = to_json(m.fit);
    nlohmann::json tests = nlohmann::json::array();
    for (const auto& t : m.tests) tests.push_back(to_json(t));
    entry["tests"] = tests;
    arr.push_back(entry);
  }
  return {{"schema_version", 1}, {"models", arr}};
}

std::vector<ModelResult> fits_from_json(const nlohmann::json& doc) {
  std::vector<ModelResult> out;
  try {
    for (const auto& entry : doc.at("models")) {
      ModelResult m;
      m.fit = glmm_fit_from_json(entry);
      for (const auto& t : entry.at("tests")) m.tests.push_back(lrt_from_json(t));
      out.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("fits file: ") + e.what());
  }
  return out;
}

Bank stage_generate(const ExperimentConfig& config) {
  const auto headers = load_headers(config.headers_path);
  return generate_bank(config.bank, headers);
}

AnswerLog stage_simulate(const ExperimentConfig& config, const Bank& bank) {
  return simulate_cohort(config.cohort, bank.items);
}

std::vector<ModelResult> stage_fit(const ExperimentConfig& config, std::span<const AnswerRecord> raw_log) {
  const AnswerLog analysed = apply_exclusion(raw_log, config.cohort.min_answers_exclusion);
  if (analysed.empty()) throw ConfigError("no students remain after exclusion");
  return fit_models(config, analysed);
}

std::optional<GuessEstimate> stage_guessers(const ExperimentConfig& config, std::span<const ModelResult> models,
                                            std::span<const AnswerRecord> raw_log) {
  const AnswerLog analysed = apply_exclusion(raw_log, config.cohort.min_answers_exclusion);
  auto input = guess_input_from(config, models, analysed);
  if (!input) return std::nullopt;
  return estimate_guessing_fraction(*input);
}

StudyReport stage_report(const ExperimentConfig& config, const std::optional<BankManifest>& manifest,
                         std::span<const AnswerRecord> raw_log, std::span<const ModelResult> models,
                         const std::optional<GuessInput>& guess_input,
                         const std::optional<GuessEstimate>& guess) {
  const AnswerLog analysed = apply_exclusion(raw_log, config.cohort.min_answers_exclusion);
  ReportInputs in;
  in.bank_manifest = manifest;
  in.raw_log = raw_log;
  in.analysed_log = analysed;
  in.min_answers = config.cohort.min_answers_exclusion;
  if (const auto* m = find_model(models, "n_distractors")) in.distractor_fit = &m->fit;
  if (const auto* m = find_model(models, "kind")) in.kind_fit = &m->fit;
  for (const auto& m : models) in.tests.insert(in.tests.end(), m.tests.begin(), m.tests.end());
  in.guess_input = guess_input;
  in.guess_estimate = guess;
  in.mode = config.mode;
  in.provenance = {config.seed, config_hash(config, load_headers(config.headers_path)), std::string(kToolVersion)};
  return build_report(in);
}

PipelineResult run_pipeline(const ExperimentConfig& config) {
  const std::filesystem::path out(config.out_dir);
  run_stage("validate", out, [&] {
    config.validate();
    std::filesystem::create_directories(out);
    std::filesystem::remove(out / "FAILED");
  });

  const Bank bank = run_stage("generate", out, [&] {
    Bank b = stage_generate(config);
    write_json(out / artifact::kBank, to_json(b));
    return b;
  });

  const AnswerLog raw = run_stage("simulate", out, [&] {
    AnswerLog log = stage_simulate(config, bank);
    write_answers_csv((out / artifact::kAnswers).string(), log);
    Rng profile_rng(derive_seed(config.cohort.seed, stream::kProfiles));
    nlohmann::json students = nlohmann::json::array();
    for (const auto& s : build_cohort(config.cohort, profile_rng)) students.push_back(to_json(s));
    write_json(out / artifact::kCohort, {{"spec", to_json(config.cohort)}, {"students", students}});
    return log;
  });

  const auto models = run_stage("fit", out, [&] {
    auto m = stage_fit(config, raw);
    write_json(out / artifact::kFits, fits_to_json(m));
    return m;
  });

  std::optional<GuessInput> guess_input;
  const auto guess = run_stage("guessers", out, [&] {
    const AnswerLog analysed = apply_exclusion(raw, config.cohort.min_answers_exclusion);
    guess_input = guess_input_from(config, models, analysed);
    std::optional<GuessEstimate> est;
    if (guess_input) est = estimate_guessing_fraction(*guess_input);
    write_json(out / artifact::kGuess,
               {{"input", guess_input ? to_json(*guess_input) : nlohmann::json(nullptr)},
                {"estimate", est ? to_json(*est) : nlohmann::json(nullptr)}});
    return est;
  });

  PipelineResult result;
  run_stage("report", out, [&] {
    result.report = stage_report(config, bank.manifest, raw, models, guess_input, guess);
    auto [json_path, text_path] = emit_report(result.report, config.out_dir);
    result.report_json = json_path;
    result.report_text = text_path;
  });
  result.ok = result.report.all_converged();
  return result;
}

}  // namespace mcqlab
