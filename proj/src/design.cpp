#include "mcqlab/design.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <numeric>
#include <set>

#include "mcqlab/errors.hpp"

namespace mcqlab {

namespace {

constexpr std::string_view kFactors[] = {"n_distractors", "kind", "header_id", "item_id", "student_id"};

bool parse_int(const std::string& s, long long& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && !s.empty();
}

bool all_numeric(const std::vector<std::string>& labels) {
  long long tmp = 0;
  return std::all_of(labels.begin(), labels.end(), [&](const std::string& s) { return parse_int(s, tmp); });
}

}  // namespace

bool is_known_factor(std::string_view name) noexcept {
  return std::find(std::begin(kFactors), std::end(kFactors), name) != std::end(kFactors);
}

std::string factor_label(const AnswerRecord& rec, std::string_view factor) {
  if (factor == "n_distractors") return std::to_string(rec.n_distractors);
  if (factor == "kind") return std::string(to_string(rec.kind));
  if (factor == "header_id") return std::to_string(rec.header_id);
  if (factor == "item_id") return std::to_string(rec.item_id);
  if (factor == "student_id") return std::to_string(rec.student_id);
  throw ConfigError("unknown factor '" + std::string(factor) + "'");
}

bool level_less(const std::string& a, const std::string& b, bool numeric) {
  if (numeric) {
    long long x = 0;
    long long y = 0;
    parse_int(a, x);
    parse_int(b, y);
    return x < y;
  }
  return a < b;
}

void sort_levels(std::vector<std::string>& labels) {
  const bool numeric = all_numeric(labels);
  std::sort(labels.begin(), labels.end(),
            [numeric](const std::string& a, const std::string& b) { return level_less(a, b, numeric); });
}

void ModelSpec::validate() const {
  if (response != "is_correct") throw ConfigError("model " + name + ": response must be is_correct");
  std::set<std::string> seen;
  for (const auto& f : fixed_factors) {
    if (!is_known_factor(f)) throw ConfigError("model " + name + ": unknown factor '" + f + "'");
    if (f == group_factor) throw ConfigError("model " + name + ": factor '" + f + "' is also the group factor");
    if (!seen.insert(f).second) throw ConfigError("model " + name + ": factor '" + f + "' listed twice");
  }
  if (!is_known_factor(group_factor)) {
    throw ConfigError("model " + name + ": unknown group factor '" + group_factor + "'");
  }
}

int FactorCoding::index_of(std::string_view level) const {
  auto it = std::find(levels.begin(), levels.end(), level);
  return it == levels.end() ? -1 : static_cast<int>(it - levels.begin());
}

Design build_design(std::span<const AnswerRecord> log, const ModelSpec& spec) {
  spec.validate();
  if (log.empty()) throw ConfigError("model " + spec.name + ": empty answer log");

  const std::size_t n_factors = spec.fixed_factors.size();
  Design d;

  // Level tables.
  std::vector<std::map<std::string, int>> level_index(n_factors);
  for (std::size_t f = 0; f < n_factors; ++f) {
    std::set<std::string> distinct;
    for (const auto& rec : log) distinct.insert(factor_label(rec, spec.fixed_factors[f]));
    if (distinct.size() < 2) {
      throw ConfigError("model " + spec.name + ": factor '" + spec.fixed_factors[f] +
                        "' has a single observed level");
    }
    FactorCoding coding;
    coding.name = spec.fixed_factors[f];
    coding.levels.assign(distinct.begin(), distinct.end());
    sort_levels(coding.levels);
    coding.counts.assign(coding.levels.size(), 0);
    coding.successes.assign(coding.levels.size(), 0);
    for (std::size_t l = 0; l < coding.levels.size(); ++l) level_index[f][coding.levels[l]] = static_cast<int>(l);
    d.factors.push_back(std::move(coding));
  }

  d.column_names.emplace_back("(Intercept)");
  for (auto& coding : d.factors) {
    coding.column.assign(coding.levels.size(), -1);
    for (std::size_t l = 1; l < coding.levels.size(); ++l) {
      coding.column[l] = static_cast<int>(d.column_names.size());
      d.column_names.push_back(coding.name + "=" + coding.levels[l]);
    }
  }

  std::vector<std::string> group_levels;
  {
    std::set<std::string> distinct;
    for (const auto& rec : log) distinct.insert(factor_label(rec, spec.group_factor));
    group_levels.assign(distinct.begin(), distinct.end());
    sort_levels(group_levels);
  }
  std::map<std::string, int> group_index;
  for (std::size_t g = 0; g < group_levels.size(); ++g) group_index[group_levels[g]] = static_cast<int>(g);

  // Canonical row order.
  std::vector<int> row_group(log.size());
  for (std::size_t i = 0; i < log.size(); ++i) row_group[i] = group_index.at(factor_label(log[i], spec.group_factor));
  std::vector<std::size_t> order(log.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = log[a];
    const auto& rb = log[b];
    return std::tie(row_group[a], ra.student_id, ra.item_id, ra.sequence_no, ra.selected_index) <
           std::tie(row_group[b], rb.student_id, rb.item_id, rb.sequence_no, rb.selected_index);
  });

  const auto n = static_cast<Eigen::Index>(log.size());
  d.y.resize(n);
  d.X = RowMatrix::Zero(n, static_cast<Eigen::Index>(d.column_names.size()));
  d.group_labels = group_levels;
  d.group_start.assign(group_levels.size() + 1, 0);

  std::map<std::vector<int>, long long> combo_counts;
  std::vector<int> levels_here(n_factors);
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t src = order[static_cast<std::size_t>(r)];
    const auto& rec = log[src];
    d.y(r) = rec.is_correct ? 1.0 : 0.0;
    d.X(r, 0) = 1.0;
    for (std::size_t f = 0; f < n_factors; ++f) {
      const int l = level_index[f].at(factor_label(rec, spec.fixed_factors[f]));
      levels_here[f] = l;
      auto& coding = d.factors[f];
      ++coding.counts[static_cast<std::size_t>(l)];
      if (rec.is_correct) ++coding.successes[static_cast<std::size_t>(l)];
      const int col = coding.column[static_cast<std::size_t>(l)];
      if (col >= 0) d.X(r, col) = 1.0;
    }
    if (n_factors > 0) ++combo_counts[std::vector<int>(levels_here.begin() + 1, levels_here.end())];
    ++d.group_start[static_cast<std::size_t>(row_group[src]) + 1];
  }
  std::partial_sum(d.group_start.begin(), d.group_start.end(), d.group_start.begin());
  for (auto& [levels, count] : combo_counts) d.combos.push_back({levels, count});
  return d;
}

nlohmann::json to_json(const ModelSpec& spec) {
  return {{"name", spec.name},
          {"response", spec.response},
          {"fixed_factors", spec.fixed_factors},
          {"group_factor", spec.group_factor}};
}

ModelSpec model_spec_from_json(const nlohmann::json& doc) {
  ModelSpec spec;
  try {
    spec.name = doc.value("name", spec.name);
    spec.response = doc.value("response", spec.response);
    spec.fixed_factors = doc.at("fixed_factors").get<std::vector<std::string>>();
    spec.group_factor = doc.value("group_factor", spec.group_factor);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
  return spec;
}

nlohmann::json to_json(const FactorCoding& f) {
  return {{"name", f.name}, {"levels", f.levels}, {"column", f.column}, {"counts", f.counts},
          {"successes", f.successes}};
}

FactorCoding factor_coding_from_json(const nlohmann::json& doc) {
  FactorCoding f;
  f.name = doc.at("name").get<std::string>();
  f.levels = doc.at("levels").get<std::vector<std::string>>();
  f.column = doc.at("column").get<std::vector<int>>();
  f.counts = doc.at("counts").get<std::vector<long long>>();
  f.successes = doc.at("successes").get<std::vector<long long>>();
  return f;
}

}  // namespace mcqlab
