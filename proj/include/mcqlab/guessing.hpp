#pragma once

// Cohort-level guessing fraction. A guesser answers a k-distractor item
// correctly with probability 1/(1+k); an informed student with p_informed.
// The fraction f minimizing the mean squared gap between the estimated
// per-level probabilities and f * p_guess + (1 - f) * p_informed solves a
// no-intercept least-squares regression of (p_est - p_informed) on
// (p_guess - p_informed).

#include <optional>
#include <vector>

#include <json.hpp>

namespace mcqlab {

double p_guessing(int n_distractors);

struct GuessInput {
  std::vector<int> levels;     // distractor counts
  std::vector<double> p_est;   // estimated P(correct) per level
  double p_informed = 1.0;
  // Optional per-level weights (e.g. answer counts); empty = unweighted.
  std::vector<double> weights;

  void validate() const;
};

struct GuessEstimate {
  double f = 0.0;  // clamped to [0, 1]
  double f_unclamped = 0.0;
  double mse = 0.0;
  std::vector<double> residuals;  // p_est - fitted, at the clamped f
};

GuessEstimate estimate_guessing_fraction(const GuessInput& input);

// Mean squared gap at a given f (weighted mean when weights are set).
double guessing_mse(const GuessInput& input, double f);

// Probability gap expressed on a 0-10 grade scale, reported at 1e-10 grade
// resolution so decimal inputs give decimal outputs (10 * |0.91 - 0.83| is
// 0.8, not 0.8000000000000007).
double grade_scale_diff(double p_a, double p_b);

nlohmann::json to_json(const GuessInput& input);
GuessInput guess_input_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const GuessEstimate& est);
GuessEstimate guess_estimate_from_json(const nlohmann::json& doc);

}  // namespace mcqlab
