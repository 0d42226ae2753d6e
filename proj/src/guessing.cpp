#include "mcqlab/guessing.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mcqlab/errors.hpp"

namespace mcqlab {

double p_guessing(int n_distractors) {
  if (n_distractors < 1) throw ConfigError("p_guessing needs at least one distractor");
  return 1.0 / (1.0 + n_distractors);
}

void GuessInput::validate() const {
  if (levels.empty()) throw ConfigError("guessing input has no levels");
  if (p_est.size() != levels.size()) throw ConfigError("p_est and levels differ in length");
  if (!weights.empty() && weights.size() != levels.size()) throw ConfigError("weights and levels differ in length");
  if (!(p_informed > 0.0 && p_informed <= 1.0)) throw ConfigError("p_informed must lie in (0, 1]");
  std::set<int> seen;
  for (int k : levels) {
    if (k < 1) throw ConfigError("levels must be positive distractor counts");
    if (!seen.insert(k).second) throw ConfigError("duplicate level " + std::to_string(k));
  }
  for (double p : p_est) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("p_est values must lie in (0, 1]");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("weights must be finite and nonnegative");
  }
}

double guessing_mse(const GuessInput& input, double f) {
  double acc = 0.0;
  double total_w = 0.0;
  for (std::size_t i = 0; i < input.levels.size(); ++i) {
    const double w = input.weights.empty() ? 1.0 : input.weights[i];
    const double fitted = f * p_guessing(input.levels[i]) + (1.0 - f) * input.p_informed;
    const double r = input.p_est[i] - fitted;
    acc += w * r * r;
    total_w += w;
  }
  return acc / total_w;
}

GuessEstimate estimate_guessing_fraction(const GuessInput& input) {
  input.validate();
  double sab = 0.0;
  double saa = 0.0;
  for (std::size_t i = 0; i < input.levels.size(); ++i) {
    const double w = input.weights.empty() ? 1.0 : input.weights[i];
    const double a = p_guessing(input.levels[i]) - input.p_informed;
    const double b = input.p_est[i] - input.p_informed;
    sab += w * a * b;
    saa += w * a * a;
  }
  if (!(saa > 0.0)) {
    throw ConfigError("degenerate design: p_guessing equals p_informed at every level");
  }
  GuessEstimate est;
  est.f_unclamped = sab / saa;
  est.f = std::clamp(est.f_unclamped, 0.0, 1.0);
  est.residuals.reserve(input.levels.size());
  for (std::size_t i = 0; i < input.levels.size(); ++i) {
    est.residuals.push_back(input.p_est[i] -
                            (est.f * p_guessing(input.levels[i]) + (1.0 - est.f) * input.p_informed));
  }
  est.mse = guessing_mse(input, est.f);
  return est;
}

double grade_scale_diff(double p_a, double p_b) {
  if (!(p_a >= 0.0 && p_a <= 1.0 && p_b >= 0.0 && p_b <= 1.0)) {
    throw ConfigError("grade_scale_diff needs probabilities in [0, 1]");
  }
  return std::round(10.0 * std::abs(p_a - p_b) * 1e10) / 1e10;
}

nlohmann::json to_json(const GuessInput& input) {
  nlohmann::json doc = {{"levels", input.levels}, {"p_est", input.p_est}, {"p_informed", input.p_informed}};
  if (!input.weights.empty()) doc["weights"] = input.weights;
  return doc;
}

GuessInput guess_input_from_json(const nlohmann::json& doc) {
  GuessInput input;
  try {
    input.levels = doc.at("levels").get<std::vector<int>>();
    input.p_est = doc.at("p_est").get<std::vector<double>>();
    input.p_informed = doc.value("p_informed", 1.0);
    if (doc.contains("weights")) input.weights = doc.at("weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("guessing input: ") + e.what());
  }
  input.validate();
  return input;
}

nlohmann::json to_json(const GuessEstimate& est) {
  return {{"f", est.f}, {"f_unclamped", est.f_unclamped}, {"mse", est.mse}, {"residuals", est.residuals}};
}

GuessEstimate guess_estimate_from_json(const nlohmann::json& doc) {
  GuessEstimate est;
  est.f = doc.at("f").get<double>();
  est.f_unclamped = doc.at("f_unclamped").get<double>();
  est.mse = doc.at("mse").get<double>();
  est.residuals = doc.at("residuals").get<std::vector<double>>();
  return est;
}

}  // namespace mcqlab
