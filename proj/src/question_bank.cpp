#include "mcqlab/question_bank.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <set>

#include "mcqlab/errors.hpp"

namespace mcqlab {

namespace {

// count distinct indices from [0, n), in draw order.
std::vector<std::size_t> draw_distinct(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + rng.uniform_index(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

void require_pool(const HeaderTemplate& header, const std::vector<std::string>& pool,
                  std::size_t needed, std::string_view which) {
  if (pool.size() < needed) {
    throw PoolExhaustedError("header " + std::to_string(header.header_id) + ": " +
                             std::string(which) + " pool has " + std::to_string(pool.size()) +
                             " statements, item needs " + std::to_string(needed));
  }
}

ItemKind draw_kind(const BankSpec& spec, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  ItemKind last = ItemKind::Plain;
  for (ItemKind kind : kAllItemKinds) {
    const double w = spec.weight(kind);
    if (w <= 0.0) continue;
    cum += w;
    last = kind;
    if (u < cum) return kind;
  }
  return last;
}

}  // namespace

std::string_view to_string(ItemKind kind) noexcept {
  switch (kind) {
    case ItemKind::Plain: return "PLAIN";
    case ItemKind::NotaPlus: return "NOTA_PLUS";
    case ItemKind::NotaMinus: return "NOTA_MINUS";
    case ItemKind::AotaPlus: return "AOTA_PLUS";
    case ItemKind::AotaMinus: return "AOTA_MINUS";
  }
  return "PLAIN";
}

std::optional<ItemKind> try_parse_item_kind(std::string_view text) noexcept {
  for (ItemKind kind : kAllItemKinds) {
    if (to_string(kind) == text) return kind;
  }
  return std::nullopt;
}

ItemKind parse_item_kind(std::string_view text) {
  if (auto kind = try_parse_item_kind(text)) return *kind;
  throw ConfigError("unknown item kind '" + std::string(text) + "'");
}

void HeaderTemplate::validate() const {
  const std::string where = "header " + std::to_string(header_id);
  if (correct_pool.size() < 3) throw ConfigError(where + ": correct_pool needs at least 3 statements");
  if (distractor_pool.size() < static_cast<std::size_t>(kMaxDistractors)) {
    throw ConfigError(where + ": distractor_pool needs at least 7 statements");
  }
  std::set<std::string_view> seen;
  for (const auto* pool : {&correct_pool, &distractor_pool}) {
    for (const auto& text : *pool) {
      if (text == kNoneOfTheAbove || text == kAllOfTheAbove) {
        throw ConfigError(where + ": pools may not contain '" + text + "'");
      }
      if (!seen.insert(text).second) {
        throw ConfigError(where + ": statement appears twice across pools: '" + text + "'");
      }
    }
  }
}

void Item::validate() const {
  const std::string where = "item " + std::to_string(item_id);
  const int n = option_count();
  if (correct_index < 0 || correct_index >= n) throw ConfigError(where + ": correct_index out of range");
  if (n_distractors != n - 1) throw ConfigError(where + ": n_distractors != options - 1");
  std::set<std::string_view> distinct(options.begin(), options.end());
  if (distinct.size() != options.size()) throw ConfigError(where + ": duplicate option text");
  if (kind == ItemKind::Plain) {
    if (n_distractors < 1 || n_distractors > kMaxDistractors) {
      throw ConfigError(where + ": plain item needs 1..7 distractors");
    }
    for (const auto& text : options) {
      if (text == kNoneOfTheAbove || text == kAllOfTheAbove) {
        throw ConfigError(where + ": plain item carries a special option");
      }
    }
    return;
  }
  if (n != kSpecialOptionCount) throw ConfigError(where + ": special item must have 4 options");
  const bool nota = kind == ItemKind::NotaPlus || kind == ItemKind::NotaMinus;
  if (options[3] != (nota ? kNoneOfTheAbove : kAllOfTheAbove)) {
    throw ConfigError(where + ": special option must be the fourth and last option");
  }
  for (int i = 0; i < 3; ++i) {
    if (options[i] == kNoneOfTheAbove || options[i] == kAllOfTheAbove) {
      throw ConfigError(where + ": special option outside the last position");
    }
  }
  const bool plus = kind == ItemKind::NotaPlus || kind == ItemKind::AotaPlus;
  if (plus ? correct_index != 3 : correct_index > 2) {
    throw ConfigError(where + ": correct_index inconsistent with kind");
  }
}

void BankSpec::validate() const {
  if (items_per_header < 1) throw ConfigError("items_per_header must be >= 1");
  double total = 0.0;
  for (double w : kind_weights) {
    if (!(w >= 0.0)) throw ConfigError("kind_weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("kind_weights must sum to 1");
  if (!(poisson_lambda > 0.0) || !std::isfinite(poisson_lambda)) {
    throw ConfigError("poisson_lambda must be positive");
  }
  if (distractor_min < 1 || distractor_min > distractor_max || distractor_max > kMaxDistractors) {
    throw ConfigError("need 1 <= distractor_min <= distractor_max <= 7");
  }
}

std::vector<double> truncated_poisson_pmf(double lambda, int lo, int hi) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("poisson lambda must be positive");
  if (lo < 0 || lo > hi) throw ConfigError("truncation bounds need 0 <= lo <= hi");
  std::vector<double> log_pmf;
  log_pmf.reserve(static_cast<std::size_t>(hi - lo + 1));
  for (int k = lo; k <= hi; ++k) {
    log_pmf.push_back(k * std::log(lambda) - lambda - std::lgamma(k + 1.0));
  }
  const double peak = *std::max_element(log_pmf.begin(), log_pmf.end());
  double total = 0.0;
  for (double& v : log_pmf) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : log_pmf) v /= total;
  return log_pmf;
}

int sample_distractor_count(double lambda, int lo, int hi, Rng& rng) {
  if (lo < 1) throw ConfigError("distractor count lower bound must be >= 1");
  const auto pmf = truncated_poisson_pmf(lambda, lo, hi);
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < pmf.size(); ++i) {
    cum += pmf[i];
    if (u < cum) return lo + static_cast<int>(i);
  }
  return hi;
}

Item assemble_item(const HeaderTemplate& header, ItemKind kind, int n_distractors, Rng& rng) {
  Item item;
  item.header_id = header.header_id;
  item.kind = kind;

  if (kind == ItemKind::Plain) {
    if (n_distractors < 1 || n_distractors > kMaxDistractors) {
      throw ConfigError("plain item needs 1..7 distractors, got " + std::to_string(n_distractors));
    }
    require_pool(header, header.correct_pool, 1, "correct");
    require_pool(header, header.distractor_pool, static_cast<std::size_t>(n_distractors), "distractor");
    const auto correct = rng.uniform_index(header.correct_pool.size());
    const auto wrong = draw_distinct(header.distractor_pool.size(),
                                     static_cast<std::size_t>(n_distractors), rng);
    // Slot 0 holds the correct statement before shuffling.
    std::vector<int> slots(static_cast<std::size_t>(n_distractors) + 1);
    std::iota(slots.begin(), slots.end(), 0);
    rng.shuffle(std::span<int>(slots));
    for (std::size_t pos = 0; pos < slots.size(); ++pos) {
      if (slots[pos] == 0) {
        item.options.push_back(header.correct_pool[correct]);
        item.correct_index = static_cast<int>(pos);
      } else {
        item.options.push_back(header.distractor_pool[wrong[static_cast<std::size_t>(slots[pos] - 1)]]);
      }
    }
    item.n_distractors = n_distractors;
    return item;
  }

  // Three listed statements, then the special option at index 3.
  std::vector<std::string> listed;
  int correct_slot = -1;
  switch (kind) {
    case ItemKind::NotaPlus: {
      require_pool(header, header.distractor_pool, 3, "distractor");
      for (auto i : draw_distinct(header.distractor_pool.size(), 3, rng)) {
        listed.push_back(header.distractor_pool[i]);
      }
      break;
    }
    case ItemKind::AotaPlus: {
      require_pool(header, header.correct_pool, 3, "correct");
      for (auto i : draw_distinct(header.correct_pool.size(), 3, rng)) {
        listed.push_back(header.correct_pool[i]);
      }
      break;
    }
    case ItemKind::NotaMinus:
    case ItemKind::AotaMinus: {
      require_pool(header, header.correct_pool, 1, "correct");
      require_pool(header, header.distractor_pool, 2, "distractor");
      listed.push_back(header.correct_pool[rng.uniform_index(header.correct_pool.size())]);
      for (auto i : draw_distinct(header.distractor_pool.size(), 2, rng)) {
        listed.push_back(header.distractor_pool[i]);
      }
      correct_slot = 0;
      break;
    }
    case ItemKind::Plain: break;
  }
  std::array<int, 3> order = {0, 1, 2};
  rng.shuffle(std::span<int>(order));
  item.correct_index = 3;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    item.options.push_back(listed[static_cast<std::size_t>(order[pos])]);
    if (order[pos] == correct_slot) item.correct_index = static_cast<int>(pos);
  }
  const bool nota = kind == ItemKind::NotaPlus || kind == ItemKind::NotaMinus;
  item.options.emplace_back(nota ? kNoneOfTheAbove : kAllOfTheAbove);
  item.n_distractors = kSpecialOptionCount - 1;
  return item;
}

BankManifest tally_manifest(std::span<const Item> items) {
  BankManifest m;
  for (const auto& item : items) {
    ++m.by_header[item.header_id];
    ++m.by_kind[item.kind];
    if (item.kind == ItemKind::Plain) ++m.plain_by_distractors[item.n_distractors];
    if (item.option_count() == kSpecialOptionCount) ++m.four_option_by_kind[item.kind];
    ++m.total;
  }
  return m;
}

Bank generate_bank(const BankSpec& spec, std::span<const HeaderTemplate> headers) {
  spec.validate();
  if (headers.empty()) throw ConfigError("generate_bank: no header templates");
  std::set<int> ids;
  for (const auto& h : headers) {
    h.validate();
    if (!ids.insert(h.header_id).second) {
      throw ConfigError("duplicate header_id " + std::to_string(h.header_id));
    }
  }

  const auto per_header = static_cast<std::size_t>(spec.items_per_header);
  Bank bank;
  bank.items.resize(headers.size() * per_header);
  std::vector<std::exception_ptr> failures(headers.size());
  const auto n_headers = static_cast<long long>(headers.size());

#pragma omp parallel for schedule(static)
  for (long long h = 0; h < n_headers; ++h) {
    const auto hi = static_cast<std::size_t>(h);
    const auto& header = headers[hi];
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(header.header_id)));
    std::size_t j = 0;
    try {
      for (; j < per_header; ++j) {
        const ItemKind kind = draw_kind(spec, rng);
        int k = kSpecialOptionCount - 1;
        if (kind == ItemKind::Plain) {
          k = sample_distractor_count(spec.poisson_lambda, spec.distractor_min, spec.distractor_max, rng);
        }
        Item item = assemble_item(header, kind, k, rng);
        item.item_id = static_cast<int>(hi * per_header + j + 1);
        bank.items[hi * per_header + j] = std::move(item);
      }
    } catch (const PoolExhaustedError& e) {
      failures[hi] = std::make_exception_ptr(
          PoolExhaustedError("item " + std::to_string(hi * per_header + j + 1) + ": " + e.what()));
    } catch (const Error& e) {
      failures[hi] = std::make_exception_ptr(
          ConfigError("item " + std::to_string(hi * per_header + j + 1) + ": " + e.what()));
    } catch (...) {
      failures[hi] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  bank.manifest = tally_manifest(bank.items);
  return bank;
}

// ---- JSON ----

std::vector<HeaderTemplate> headers_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw ConfigError("header file must hold a JSON array");
  std::vector<HeaderTemplate> out;
  for (const auto& entry : doc) {
    HeaderTemplate h;
    try {
      h.header_id = entry.at("header_id").get<int>();
      h.stem_text = entry.at("stem_text").get<std::string>();
      h.correct_pool = entry.at("correct_pool").get<std::vector<std::string>>();
      h.distractor_pool = entry.at("distractor_pool").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("header template: ") + e.what());
    }
    h.validate();
    out.push_back(std::move(h));
  }
  return out;
}

std::vector<HeaderTemplate> load_headers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open header file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return headers_from_json(doc);
}

nlohmann::json to_json(const Item& item) {
  return {{"item_id", item.item_id},
          {"header_id", item.header_id},
          {"kind", std::string(to_string(item.kind))},
          {"n_distractors", item.n_distractors},
          {"correct_index", item.correct_index},
          {"options", item.options}};
}

Item item_from_json(const nlohmann::json& doc) {
  Item item;
  try {
    item.item_id = doc.at("item_id").get<int>();
    item.header_id = doc.at("header_id").get<int>();
    item.kind = parse_item_kind(doc.at("kind").get<std::string>());
    item.n_distractors = doc.at("n_distractors").get<int>();
    item.correct_index = doc.at("correct_index").get<int>();
    item.options = doc.at("options").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("item record: ") + e.what());
  }
  item.validate();
  return item;
}

namespace {
template <typename Key>
nlohmann::json count_map(const std::map<Key, int>& m) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, count] : m) {
    if constexpr (std::is_same_v<Key, ItemKind>) {
      out[std::string(to_string(key))] = count;
    } else {
      out[std::to_string(key)] = count;
    }
  }
  return out;
}
}  // namespace

nlohmann::json to_json(const BankManifest& m) {
  return {{"total", m.total},
          {"by_header", count_map(m.by_header)},
          {"by_kind", count_map(m.by_kind)},
          {"plain_by_distractors", count_map(m.plain_by_distractors)},
          {"four_option_by_kind", count_map(m.four_option_by_kind)}};
}

nlohmann::json to_json(const Bank& bank) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& item : bank.items) items.push_back(to_json(item));
  return {{"schema_version", 1}, {"items", std::move(items)}, {"manifest", to_json(bank.manifest)}};
}

Bank bank_from_json(const nlohmann::json& doc) {
  Bank bank;
  if (!doc.contains("items") || !doc.at("items").is_array()) {
    throw ConfigError("bank file: missing items array");
  }
  for (const auto& entry : doc.at("items")) bank.items.push_back(item_from_json(entry));
  bank.manifest = tally_manifest(bank.items);
  return bank;
}

nlohmann::json to_json(const BankSpec& spec) {
  nlohmann::json weights = nlohmann::json::object();
  for (ItemKind kind : kAllItemKinds) weights[std::string(to_string(kind))] = spec.weight(kind);
  return {{"items_per_header", spec.items_per_header},
          {"kind_weights", weights},
          {"poisson_lambda", spec.poisson_lambda},
          {"distractor_min", spec.distractor_min},
          {"distractor_max", spec.distractor_max},
          {"seed", spec.seed}};
}

BankSpec bank_spec_from_json(const nlohmann::json& doc) {
  BankSpec spec;
  try {
    spec.items_per_header = doc.value("items_per_header", spec.items_per_header);
    spec.poisson_lambda = doc.value("poisson_lambda", spec.poisson_lambda);
    spec.distractor_min = doc.value("distractor_min", spec.distractor_min);
    spec.distractor_max = doc.value("distractor_max", spec.distractor_max);
    spec.seed = doc.value("seed", spec.seed);
    if (doc.contains("kind_weights")) {
      spec.kind_weights.fill(0.0);
      for (const auto& [name, w] : doc.at("kind_weights").items()) {
        spec.kind_weights[static_cast<std::size_t>(parse_item_kind(name))] = w.get<double>();
      }
      // File weights are relative; normalize so hand-written ratios validate.
      // Weights already summing to 1 are kept bit for bit.
      double total = 0.0;
      for (double w : spec.kind_weights) total += w;
      if (total > 0.0 && std::abs(total - 1.0) > 1e-12) {
        for (double& w : spec.kind_weights) w /= total;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bank spec: ") + e.what());
  }
  return spec;
}

}  // namespace mcqlab
