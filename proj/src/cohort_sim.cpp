#include "mcqlab/cohort_sim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "mcqlab/errors.hpp"

namespace mcqlab {

namespace {

double inv_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double lookup_header_effect(const CohortSpec& spec, int header_id) {
  // An empty map means no header effects at all.
  if (spec.header_effects.empty()) return 0.0;
  auto it = spec.header_effects.find(header_id);
  if (it == spec.header_effects.end()) {
    throw ConfigError("no header effect for header_id " + std::to_string(header_id));
  }
  return it->second;
}

AnswerLog simulate_student(const CohortSpec& spec, const StudentProfile& student, std::span<const Item> bank,
                           std::span<const std::size_t> item_order, Rng& rng) {
  AnswerLog out;
  out.reserve(item_order.size());
  int seq = 1;
  for (std::size_t idx : item_order) {
    AnswerRecord rec = simulate_answer(student, bank[idx], spec, rng);
    rec.sequence_no = seq++;
    out.push_back(rec);
  }
  return out;
}

}  // namespace

std::string level_key(ItemKind kind, int n_distractors) {
  if (kind == ItemKind::Plain) return std::to_string(n_distractors);
  return std::string(to_string(kind));
}

void CohortSpec::validate() const {
  if (n_students < 1) throw ConfigError("cohort needs n_students >= 1");
  if (!(f_guessing >= 0.0 && f_guessing <= 1.0)) throw ConfigError("f_guessing must lie in [0, 1]");
  if (!(sigma_u >= 0.0) || !std::isfinite(sigma_u)) throw ConfigError("sigma_u must be >= 0");
  if (!std::isfinite(beta0)) throw ConfigError("beta0 must be finite");
  if (answers_per_student.min < 0 || answers_per_student.min > answers_per_student.max) {
    throw ConfigError("answers_per_student needs 0 <= min <= max");
  }
  if (min_answers_exclusion < 0) throw ConfigError("min_answers_exclusion must be >= 0");
}

std::vector<StudentProfile> build_cohort(const CohortSpec& spec, Rng& rng) {
  spec.validate();
  const auto n = static_cast<std::size_t>(spec.n_students);
  std::vector<StudentProfile> students(n);
  for (std::size_t i = 0; i < n; ++i) {
    students[i].student_id = static_cast<int>(i + 1);
    students[i].ability = spec.sigma_u > 0.0 ? rng.normal(0.0, spec.sigma_u) : 0.0;
  }
  if (spec.guesser_assignment == GuesserAssignment::Bernoulli) {
    for (auto& s : students) s.is_guesser = rng.bernoulli(spec.f_guessing);
  } else {
    const auto count = static_cast<std::size_t>(std::llround(spec.f_guessing * static_cast<double>(n)));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i = 0; i < count; ++i) students[idx[i]].is_guesser = true;
  }
  return students;
}

double correct_probability(const StudentProfile& student, const Item& item, const CohortSpec& spec) {
  if (spec.regime == Regime::Mixture) {
    return student.is_guesser ? 1.0 / item.option_count() : 1.0;
  }
  auto it = spec.level_effects.find(level_key(item));
  if (it == spec.level_effects.end()) {
    throw ConfigError("no level effect for level '" + level_key(item) + "'");
  }
  const double eta = spec.beta0 + it->second + lookup_header_effect(spec, item.header_id) + student.ability;
  return inv_logit(eta);
}

AnswerRecord simulate_answer(const StudentProfile& student, const Item& item, const CohortSpec& spec,
                             Rng& rng) {
  AnswerRecord rec;
  rec.student_id = student.student_id;
  rec.item_id = item.item_id;
  rec.header_id = item.header_id;
  rec.n_distractors = item.n_distractors;
  rec.kind = item.kind;

  const int n_options = item.option_count();
  if (spec.regime == Regime::Mixture) {
    rec.selected_index = student.is_guesser
                             ? static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n_options)))
                             : item.correct_index;
  } else {
    const double p = correct_probability(student, item, spec);
    if (rng.uniform() < p) {
      rec.selected_index = item.correct_index;
    } else {
      int pick = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n_options - 1)));
      rec.selected_index = pick >= item.correct_index ? pick + 1 : pick;
    }
  }
  rec.is_correct = rec.selected_index == item.correct_index;
  return rec;
}

AnswerLog simulate_cohort(const CohortSpec& spec, std::span<const Item> bank) {
  spec.validate();
  if (bank.empty()) throw ConfigError("simulate_cohort: empty bank");
  if (static_cast<std::size_t>(spec.answers_per_student.max) > bank.size()) {
    throw ConfigError("answers_per_student (" + std::to_string(spec.answers_per_student.max) +
                      ") exceeds bank size (" + std::to_string(bank.size()) + ")");
  }
  Rng profile_rng(derive_seed(spec.seed, stream::kProfiles));
  const auto students = build_cohort(spec, profile_rng);
  const std::uint64_t student_seed = derive_seed(spec.seed, stream::kStudents);

  std::vector<AnswerLog> per_student(students.size());
  std::vector<std::exception_ptr> failures(students.size());
  const auto n = static_cast<long long>(students.size());

#pragma omp parallel for schedule(dynamic, 8)
  for (long long s = 0; s < n; ++s) {
    const auto si = static_cast<std::size_t>(s);
    try {
      Rng rng(derive_seed(student_seed, static_cast<std::uint64_t>(students[si].student_id)));
      const auto count = static_cast<std::size_t>(
          rng.uniform_int(spec.answers_per_student.min, spec.answers_per_student.max));
      std::vector<std::size_t> order(bank.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = 0; i < count; ++i) {
        std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
      }
      order.resize(count);
      per_student[si] = simulate_student(spec, students[si], bank, order, rng);
    } catch (...) {
      failures[si] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  AnswerLog log;
  for (auto& part : per_student) log.insert(log.end(), part.begin(), part.end());
  return log;
}

AnswerLog simulate_assigned(const CohortSpec& spec, std::span<const StudentProfile> students,
                            std::span<const Item> bank,
                            std::span<const std::pair<std::size_t, std::size_t>> assignment) {
  spec.validate();
  std::vector<std::vector<std::size_t>> orders(students.size());
  for (const auto& [student, item] : assignment) {
    if (student >= students.size() || item >= bank.size()) {
      throw ConfigError("simulate_assigned: assignment index out of range");
    }
    orders[student].push_back(item);
  }
  const std::uint64_t student_seed = derive_seed(spec.seed, stream::kStudents);
  std::vector<AnswerLog> per_student(students.size());
  std::vector<std::exception_ptr> failures(students.size());
  const auto n = static_cast<long long>(students.size());

#pragma omp parallel for schedule(dynamic, 8)
  for (long long s = 0; s < n; ++s) {
    const auto si = static_cast<std::size_t>(s);
    try {
      Rng rng(derive_seed(student_seed, static_cast<std::uint64_t>(students[si].student_id)));
      per_student[si] = simulate_student(spec, students[si], bank, orders[si], rng);
    } catch (...) {
      failures[si] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  AnswerLog log;
  for (auto& part : per_student) log.insert(log.end(), part.begin(), part.end());
  std::stable_sort(log.begin(), log.end(), [](const AnswerRecord& a, const AnswerRecord& b) {
    return a.student_id != b.student_id ? a.student_id < b.student_id : a.sequence_no < b.sequence_no;
  });
  return log;
}

AnswerLog apply_exclusion(std::span<const AnswerRecord> log, int min_answers) {
  std::unordered_map<int, int> counts;
  for (const auto& rec : log) ++counts[rec.student_id];
  AnswerLog out;
  out.reserve(log.size());
  for (const auto& rec : log) {
    if (counts[rec.student_id] >= min_answers) out.push_back(rec);
  }
  return out;
}

double calibrate_level_effect(double target, double beta0, std::span<const double> header_effects,
                              std::span<const double> header_weights) {
  if (!(target > 0.0 && target < 1.0)) throw ConfigError("calibration target must lie in (0, 1)");
  if (header_effects.size() != header_weights.size()) {
    throw ConfigError("calibration: header effect and weight counts differ");
  }
  double total_w = 0.0;
  for (double w : header_weights) total_w += w;
  auto typical = [&](double e) {
    if (header_effects.empty()) return inv_logit(beta0 + e);
    double acc = 0.0;
    for (std::size_t h = 0; h < header_effects.size(); ++h) {
      acc += header_weights[h] * inv_logit(beta0 + e + header_effects[h]);
    }
    return acc / total_w;
  };
  double lo = -40.0;
  double hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-14; ++i) {
    const double mid = 0.5 * (lo + hi);
    (typical(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void write_answers_csv(std::ostream& out, std::span<const AnswerRecord> log) {
  out << kAnswerCsvHeader << '\n';
  for (const auto& r : log) {
    out << r.student_id << ',' << r.item_id << ',' << r.header_id << ',' << r.n_distractors << ','
        << to_string(r.kind) << ',' << r.selected_index << ',' << (r.is_correct ? 1 : 0) << ','
        << r.sequence_no << '\n';
  }
}

void write_answers_csv(const std::string& path, std::span<const AnswerRecord> log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  write_answers_csv(out, log);
  if (!out) throw Error("write failed for " + path);
}

nlohmann::json to_json(const CohortSpec& spec) {
  nlohmann::json headers = nlohmann::json::object();
  for (const auto& [id, e] : spec.header_effects) headers[std::to_string(id)] = e;
  nlohmann::json answers;
  if (spec.answers_per_student.fixed()) {
    answers = spec.answers_per_student.min;
  } else {
    answers = {{"min", spec.answers_per_student.min}, {"max", spec.answers_per_student.max}};
  }
  return {{"n_students", spec.n_students},
          {"f_guessing", spec.f_guessing},
          {"sigma_u", spec.sigma_u},
          {"beta0", spec.beta0},
          {"level_effects", spec.level_effects},
          {"header_effects", headers},
          {"answers_per_student", answers},
          {"regime", spec.regime == Regime::Mixture ? "mixture" : "logistic"},
          {"guesser_assignment",
           spec.guesser_assignment == GuesserAssignment::Bernoulli ? "bernoulli" : "fixed_count"},
          {"min_answers_exclusion", spec.min_answers_exclusion},
          {"seed", spec.seed}};
}

CohortSpec cohort_spec_from_json(const nlohmann::json& doc) {
  CohortSpec spec;
  try {
    spec.n_students = doc.value("n_students", spec.n_students);
    spec.f_guessing = doc.value("f_guessing", spec.f_guessing);
    spec.sigma_u = doc.value("sigma_u", spec.sigma_u);
    spec.beta0 = doc.value("beta0", spec.beta0);
    spec.min_answers_exclusion = doc.value("min_answers_exclusion", spec.min_answers_exclusion);
    spec.seed = doc.value("seed", spec.seed);
    if (doc.contains("level_effects")) {
      spec.level_effects = doc.at("level_effects").get<std::map<std::string, double>>();
    }
    if (doc.contains("header_effects")) {
      for (const auto& [id, e] : doc.at("header_effects").items()) {
        spec.header_effects[std::stoi(id)] = e.get<double>();
      }
    }
    if (doc.contains("answers_per_student")) {
      const auto& a = doc.at("answers_per_student");
      if (a.is_number_integer()) {
        spec.answers_per_student = {a.get<int>(), a.get<int>()};
      } else {
        spec.answers_per_student = {a.at("min").get<int>(), a.at("max").get<int>()};
      }
    }
    const auto regime = doc.value("regime", std::string("logistic"));
    if (regime == "mixture") {
      spec.regime = Regime::Mixture;
    } else if (regime == "logistic") {
      spec.regime = Regime::Logistic;
    } else {
      throw ConfigError("unknown regime '" + regime + "'");
    }
    const auto assign = doc.value("guesser_assignment", std::string("bernoulli"));
    if (assign == "bernoulli") {
      spec.guesser_assignment = GuesserAssignment::Bernoulli;
    } else if (assign == "fixed_count") {
      spec.guesser_assignment = GuesserAssignment::FixedCount;
    } else {
      throw ConfigError("unknown guesser_assignment '" + assign + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("cohort spec: ") + e.what());
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("cohort spec: ") + e.what());
  }
  return spec;
}

nlohmann::json to_json(const StudentProfile& p) {
  return {{"student_id", p.student_id}, {"ability", p.ability}, {"is_guesser", p.is_guesser}};
}

}  // namespace mcqlab
