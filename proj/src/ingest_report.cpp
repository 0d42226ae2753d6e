#include "mcqlab/ingest_report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "mcqlab/errors.hpp"

namespace mcqlab {

namespace {

constexpr std::string_view kColumns[] = {"student_id", "item_id",        "header_id",  "n_distractors",
                                         "kind",       "selected_index", "is_correct", "sequence_no"};

int parse_field(std::string_view text, const std::string& source, std::size_t line, std::string_view column) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ParseError(source, line, std::string(column), "expected an integer, got '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}


BankManifest manifest_from_json(const nlohmann::json& doc) {
  BankManifest m;
  m.total = doc.at("total").get<int>();
  for (const auto& [k, v] : doc.at("by_header").items()) m.by_header[std::stoi(k)] = v.get<int>();
  for (const auto& [k, v] : doc.at("by_kind").items()) m.by_kind[parse_item_kind(k)] = v.get<int>();
  for (const auto& [k, v] : doc.at("plain_by_distractors").items()) {
    m.plain_by_distractors[std::stoi(k)] = v.get<int>();
  }
  for (const auto& [k, v] : doc.at("four_option_by_kind").items()) {
    m.four_option_by_kind[parse_item_kind(k)] = v.get<int>();
  }
  return m;
}

std::vector<ProbabilityRow> probability_table(std::span<const AnswerRecord> subset, std::string_view factor,
                                              const GlmmFit* fit, PredictionMode mode) {
  std::vector<ProbabilityRow> rows;
  for (const auto& p : naive_proportions(subset, factor)) {
    ProbabilityRow row;
    row.level = p.level;
    row.n_items = p.n_items;
    row.n_answers = p.n_answers;
    row.naive = p.proportion;
    if (fit && !fit->factors.empty() && fit->factors.front().name == factor &&
        fit->factors.front().index_of(p.level) >= 0) {
      row.model = predict_prob(*fit, p.level, mode);
    }
    rows.push_back(row);
  }
  return rows;
}

std::optional<GradeDiff> widest_gap(const std::string& name, const std::vector<ProbabilityRow>& rows) {
  if (rows.size() < 2) return std::nullopt;
  auto value = [](const ProbabilityRow& r) { return r.model.value_or(r.naive); };
  const auto hi = std::max_element(rows.begin(), rows.end(),
                                   [&](const auto& a, const auto& b) { return value(a) < value(b); });
  const auto lo = std::min_element(rows.begin(), rows.end(),
                                   [&](const auto& a, const auto& b) { return value(a) < value(b); });
  GradeDiff d;
  d.name = name;
  d.level_high = hi->level;
  d.level_low = lo->level;
  d.p_high = value(*hi);
  d.p_low = value(*lo);
  d.grade_points = grade_scale_diff(d.p_high, d.p_low);
  return d;
}

ModelStatus status_of(const GlmmFit& fit) {
  return {fit.spec.name, fit.converged, fit.iterations, fit.sigma_u, fit.loglik, fit.warnings};
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

std::string display_level(const std::string& level) {
  if (level == "PLAIN") return "noAOTA/NOTA";
  if (level == "NOTA_PLUS") return "NOTA+";
  if (level == "NOTA_MINUS") return "NOTA-";
  if (level == "AOTA_PLUS") return "AOTA+";
  if (level == "AOTA_MINUS") return "AOTA-";
  return level;
}

std::string format_p(double p) {
  if (p < 0.001) return "< 0.001";
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << p;
  return out.str();
}

}  // namespace

IngestedLog ingest_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open answer log " + path);
  return ingest_csv(in, path);
}

IngestedLog ingest_csv(std::istream& in, const std::string& source) {
  IngestedLog out;
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(source, 1, "header", "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kAnswerCsvHeader) {
    throw ParseError(source, 1, "header", "expected '" + std::string(kAnswerCsvHeader) + "'");
  }
  std::set<std::tuple<int, int, int>> keys;
  std::set<int> students;
  std::set<int> items;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != std::size(kColumns)) {
      throw ParseError(source, line_no, "row", "expected 8 fields, got " + std::to_string(fields.size()));
    }
    AnswerRecord r;
    r.student_id = parse_field(fields[0], source, line_no, kColumns[0]);
    r.item_id = parse_field(fields[1], source, line_no, kColumns[1]);
    r.header_id = parse_field(fields[2], source, line_no, kColumns[2]);
    r.n_distractors = parse_field(fields[3], source, line_no, kColumns[3]);
    const auto kind = try_parse_item_kind(fields[4]);
    if (!kind) throw ParseError(source, line_no, "kind", "unknown kind '" + std::string(fields[4]) + "'");
    r.kind = *kind;
    r.selected_index = parse_field(fields[5], source, line_no, kColumns[5]);
    const int correct = parse_field(fields[6], source, line_no, kColumns[6]);
    r.sequence_no = parse_field(fields[7], source, line_no, kColumns[7]);

    if (r.n_distractors < 1 || r.n_distractors > kMaxDistractors) {
      throw ParseError(source, line_no, "n_distractors", "must lie in 1..7");
    }
    if (is_special(r.kind) && r.n_distractors != kSpecialOptionCount - 1) {
      throw ParseError(source, line_no, "n_distractors", "NOTA/AOTA items have exactly 3 distractors");
    }
    if (r.selected_index < 0 || r.selected_index >= r.option_count()) {
      throw ParseError(source, line_no, "selected_index",
                       std::to_string(r.selected_index) + " is outside 0.." + std::to_string(r.option_count() - 1));
    }
    if (correct != 0 && correct != 1) throw ParseError(source, line_no, "is_correct", "must be 0 or 1");
    r.is_correct = correct == 1;
    if (r.kind == ItemKind::NotaPlus || r.kind == ItemKind::AotaPlus) {
      if (r.is_correct != (r.selected_index == 3)) {
        throw ParseError(source, line_no, "is_correct", "inconsistent with the special option at index 3");
      }
    } else if (is_special(r.kind) && r.selected_index == 3 && r.is_correct) {
      throw ParseError(source, line_no, "is_correct", "the special option of a '-' item is never correct");
    }
    if (!keys.emplace(r.student_id, r.item_id, r.sequence_no).second) {
      throw ParseError(source, line_no, "sequence_no", "duplicate (student_id, item_id, sequence_no)");
    }
    students.insert(r.student_id);
    items.insert(r.item_id);
    out.log.push_back(r);
  }
  out.summary = {out.log.size(), students.size(), items.size()};
  return out;
}

std::vector<CountRow> summarize_counts(std::span<const AnswerRecord> log, std::string_view factor) {
  std::vector<CountRow> out;
  for (const auto& p : naive_proportions(log, factor)) out.push_back({p.level, p.n_items, p.n_answers});
  return out;
}

AnswerLog distractor_subset(std::span<const AnswerRecord> log) {
  AnswerLog out;
  std::copy_if(log.begin(), log.end(), std::back_inserter(out),
               [](const AnswerRecord& r) { return r.kind == ItemKind::Plain; });
  return out;
}

AnswerLog nota_aota_subset(std::span<const AnswerRecord> log) {
  AnswerLog out;
  std::copy_if(log.begin(), log.end(), std::back_inserter(out),
               [](const AnswerRecord& r) { return r.option_count() == kSpecialOptionCount; });
  return out;
}

bool StudyReport::all_converged() const {
  return std::all_of(models.begin(), models.end(), [](const ModelStatus& m) { return m.converged; });
}

StudyReport build_report(const ReportInputs& in) {
  StudyReport r;
  r.bank_manifest = in.bank_manifest;
  r.provenance = in.provenance;
  r.prediction_mode = std::string(to_string(in.mode));

  auto count_students = [](std::span<const AnswerRecord> log) {
    std::set<int> ids;
    for (const auto& rec : log) ids.insert(rec.student_id);
    return static_cast<long long>(ids.size());
  };
  r.cohort = {count_students(in.raw_log), count_students(in.analysed_log),
              static_cast<long long>(in.raw_log.size()), static_cast<long long>(in.analysed_log.size()),
              in.min_answers};

  const auto plain = distractor_subset(in.analysed_log);
  const auto four = nota_aota_subset(in.analysed_log);
  r.table1 = summarize_counts(plain, "n_distractors");
  r.table2 = summarize_counts(four, "kind");
  r.table3 = probability_table(plain, "n_distractors", in.distractor_fit, in.mode);
  r.table4 = probability_table(four, "kind", in.kind_fit, in.mode);

  if (in.distractor_fit) r.models.push_back(status_of(*in.distractor_fit));
  if (in.kind_fit) r.models.push_back(status_of(*in.kind_fit));
  r.tests = in.tests;
  r.guess_input = in.guess_input;
  r.guess_estimate = in.guess_estimate;
  if (auto d = widest_gap("distractor_count", r.table3)) r.grade_diffs.push_back(*d);
  if (auto d = widest_gap("nota_aota_type", r.table4)) r.grade_diffs.push_back(*d);
  return r;
}

std::string format_2dp(double value) {
  const double scaled = value * 100.0;
  double whole = std::floor(scaled);
  const double frac = scaled - whole;
  // Ties within representation error of .5 go to the even neighbour.
  if (std::abs(frac - 0.5) < 1e-9) {
    if (std::fmod(whole, 2.0) != 0.0) whole += 1.0;
  } else if (frac > 0.5) {
    whole += 1.0;
  }
  const auto cents = static_cast<long long>(whole);
  const long long mag = cents < 0 ? -cents : cents;
  std::ostringstream out;
  if (cents < 0) out << '-';
  out << mag / 100 << '.' << std::setw(2) << std::setfill('0') << mag % 100;
  return out.str();
}

std::string render_text(const StudyReport& r) {
  std::ostringstream out;
  out << "Study report (seed " << r.provenance.seed << ", config " << r.provenance.config_hash << ", mcqlab "
      << r.provenance.tool_version << ")\n\n";

  out << "Cohort: " << r.cohort.students_before << " students before exclusion, " << r.cohort.students_after
      << " with at least " << r.cohort.min_answers << " answers; " << r.cohort.answers_after << " of "
      << r.cohort.answers_before << " answers analysed\n";
  if (r.bank_manifest) {
    out << "Bank: " << r.bank_manifest->total << " items over " << r.bank_manifest->by_header.size()
        << " headers\n";
  } else {
    out << "Bank: not computed\n";
  }
  out << '\n';

  auto counts = [&](const char* title, const char* level_title, const std::vector<CountRow>& rows) {
    out << title << '\n';
    out << pad(level_title, 22) << pad("Number of items", 18) << pad("Number of answers", 20) << '\n';
    if (rows.empty()) out << "  not computed\n";
    for (const auto& row : rows) {
      out << pad(display_level(row.level), 22) << pad(std::to_string(row.n_items), 18)
          << pad(std::to_string(row.n_answers), 20) << '\n';
    }
    out << '\n';
  };
  counts("Table 1. Items used for the distractor analysis", "Number of distractors", r.table1);
  counts("Table 2. Items used for the NOTA/AOTA analysis", "NOTA/AOTA type", r.table2);

  auto probs = [&](const char* title, const char* level_title, const std::vector<ProbabilityRow>& rows) {
    out << title << " (" << r.prediction_mode << " predictions)\n";
    out << pad(level_title, 22) << pad("Proportion correct", 20) << pad("Model estimate", 16) << '\n';
    if (rows.empty()) out << "  not computed\n";
    for (const auto& row : rows) {
      out << pad(display_level(row.level), 22) << pad(format_2dp(row.naive), 20)
          << pad(row.model ? format_2dp(*row.model) : std::string("not computed"), 16) << '\n';
    }
    out << '\n';
  };
  probs("Table 3. Probability of a correct answer by number of distractors", "Number of distractors", r.table3);
  probs("Table 4. Probability of a correct answer by NOTA/AOTA type", "NOTA/AOTA type", r.table4);

  out << "Models\n";
  if (r.models.empty()) out << "  not computed\n";
  for (const auto& m : r.models) {
    std::ostringstream line;
    line << std::setprecision(6) << "  " << m.name << ": " << (m.converged ? "converged" : "NOT CONVERGED")
         << " after " << m.iterations << " iterations, sigma_u = " << m.sigma_u << ", loglik = " << std::fixed
         << std::setprecision(3) << m.loglik;
    out << line.str() << '\n';
    for (const auto& w : m.warnings) out << "    warning: " << w << '\n';
  }
  out << '\n';

  out << "Likelihood-ratio tests\n";
  if (r.tests.empty()) out << "  not computed\n";
  for (const auto& t : r.tests) {
    std::ostringstream line;
    line << "  " << t.name << ": chi2 = " << std::fixed << std::setprecision(2) << t.statistic << ", df = " << t.df
         << ", p " << (t.p_value < 0.001 ? "" : "= ") << format_p(t.p_value)
         << (t.boundary_corrected ? " (boundary mixture)" : "");
    out << line.str() << '\n';
  }
  out << '\n';

  out << "Guessing fraction\n";
  if (r.guess_estimate) {
    std::ostringstream line;
    line << "  f = " << std::fixed << std::setprecision(3) << r.guess_estimate->f
         << " (unclamped " << r.guess_estimate->f_unclamped << ", mse " << std::scientific << std::setprecision(3)
         << r.guess_estimate->mse << ")";
    out << line.str() << '\n';
  } else {
    out << "  not computed\n";
  }
  out << '\n';

  out << "Largest gaps on a 0-10 grade scale\n";
  if (r.grade_diffs.empty()) out << "  not computed\n";
  for (const auto& d : r.grade_diffs) {
    out << "  " << d.name << ": " << display_level(d.level_high) << " " << format_2dp(d.p_high) << " vs "
        << display_level(d.level_low) << " " << format_2dp(d.p_low) << " -> " << format_2dp(d.grade_points)
        << " grade points\n";
  }
  return out.str();
}

nlohmann::json to_json(const StudyReport& r) {
  auto count_rows = [](const std::vector<CountRow>& rows) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& row : rows) {
      a.push_back({{"level", row.level}, {"n_items", row.n_items}, {"n_answers", row.n_answers}});
    }
    return a;
  };
  auto prob_rows = [](const std::vector<ProbabilityRow>& rows) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& row : rows) {
      a.push_back({{"level", row.level},
                   {"n_items", row.n_items},
                   {"n_answers", row.n_answers},
                   {"naive", row.naive},
                   {"model", row.model ? nlohmann::json(*row.model) : nlohmann::json(nullptr)}});
    }
    return a;
  };
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : r.models) {
    models.push_back({{"name", m.name},
                      {"converged", m.converged},
                      {"iterations", m.iterations},
                      {"sigma_u", m.sigma_u},
                      {"loglik", m.loglik},
                      {"warnings", m.warnings}});
  }
  nlohmann::json tests = nlohmann::json::array();
  for (const auto& t : r.tests) tests.push_back(to_json(t));
  nlohmann::json diffs = nlohmann::json::array();
  for (const auto& d : r.grade_diffs) {
    diffs.push_back({{"name", d.name},
                     {"level_high", d.level_high},
                     {"level_low", d.level_low},
                     {"p_high", d.p_high},
                     {"p_low", d.p_low},
                     {"grade_points", d.grade_points}});
  }
  return {{"schema_version", r.schema_version},
          {"bank_manifest", r.bank_manifest ? to_json(*r.bank_manifest) : nlohmann::json(nullptr)},
          {"cohort",
           {{"students_before", r.cohort.students_before},
            {"students_after", r.cohort.students_after},
            {"answers_before", r.cohort.answers_before},
            {"answers_after", r.cohort.answers_after},
            {"min_answers", r.cohort.min_answers}}},
          {"table1", count_rows(r.table1)},
          {"table2", count_rows(r.table2)},
          {"table3", prob_rows(r.table3)},
          {"table4", prob_rows(r.table4)},
          {"prediction_mode", r.prediction_mode},
          {"models", models},
          {"tests", tests},
          {"guess_input", r.guess_input ? to_json(*r.guess_input) : nlohmann::json(nullptr)},
          {"guess_estimate", r.guess_estimate ? to_json(*r.guess_estimate) : nlohmann::json(nullptr)},
          {"grade_diffs", diffs},
          {"provenance",
           {{"seed", r.provenance.seed},
            {"config_hash", r.provenance.config_hash},
            {"tool_version", r.provenance.tool_version}}}};
}

StudyReport report_from_json(const nlohmann::json& doc) {
  StudyReport r;
  try {
    r.schema_version = doc.at("schema_version").get<int>();
    if (!doc.at("bank_manifest").is_null()) r.bank_manifest = manifest_from_json(doc.at("bank_manifest"));
    const auto& c = doc.at("cohort");
    r.cohort = {c.at("students_before").get<long long>(), c.at("students_after").get<long long>(),
                c.at("answers_before").get<long long>(), c.at("answers_after").get<long long>(),
                c.at("min_answers").get<int>()};
    for (const char* key : {"table1", "table2"}) {
      auto& table = std::string_view(key) == "table1" ? r.table1 : r.table2;
      for (const auto& row : doc.at(key)) {
        table.push_back({row.at("level").get<std::string>(), row.at("n_items").get<long long>(),
                         row.at("n_answers").get<long long>()});
      }
    }
    for (const char* key : {"table3", "table4"}) {
      auto& table = std::string_view(key) == "table3" ? r.table3 : r.table4;
      for (const auto& row : doc.at(key)) {
        ProbabilityRow p;
        p.level = row.at("level").get<std::string>();
        p.n_items = row.at("n_items").get<long long>();
        p.n_answers = row.at("n_answers").get<long long>();
        p.naive = row.at("naive").get<double>();
        if (!row.at("model").is_null()) p.model = row.at("model").get<double>();
        table.push_back(p);
      }
    }
    r.prediction_mode = doc.at("prediction_mode").get<std::string>();
    for (const auto& m : doc.at("models")) {
      r.models.push_back({m.at("name").get<std::string>(), m.at("converged").get<bool>(),
                          m.at("iterations").get<int>(), m.at("sigma_u").get<double>(),
                          m.at("loglik").get<double>(), m.at("warnings").get<std::vector<std::string>>()});
    }
    for (const auto& t : doc.at("tests")) r.tests.push_back(lrt_from_json(t));
    if (!doc.at("guess_input").is_null()) r.guess_input = guess_input_from_json(doc.at("guess_input"));
    if (!doc.at("guess_estimate").is_null()) r.guess_estimate = guess_estimate_from_json(doc.at("guess_estimate"));
    for (const auto& d : doc.at("grade_diffs")) {
      r.grade_diffs.push_back({d.at("name").get<std::string>(), d.at("level_high").get<std::string>(),
                               d.at("level_low").get<std::string>(), d.at("p_high").get<double>(),
                               d.at("p_low").get<double>(), d.at("grade_points").get<double>()});
    }
    const auto& p = doc.at("provenance");
    r.provenance = {p.at("seed").get<std::uint64_t>(), p.at("config_hash").get<std::string>(),
                    p.at("tool_version").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("report file: ") + e.what());
  }
  return r;
}

std::pair<std::string, std::string> emit_report(const StudyReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string stem = (std::filesystem::path(dir) / ("report_" + std::to_string(report.provenance.seed))).string();
  const std::string json_path = stem + ".json";
  const std::string text_path = stem + ".txt";
  {
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw Error("cannot write " + json_path);
    out << to_json(report).dump(2) << '\n';
  }
  {
    std::ofstream out(text_path, std::ios::binary);
    if (!out) throw Error("cannot write " + text_path);
    out << render_text(report);
  }
  return {json_path, text_path};
}

}  // namespace mcqlab
