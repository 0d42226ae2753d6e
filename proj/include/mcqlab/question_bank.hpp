#pragma once

// Synthetic multiple-choice item banks built from header templates: one
// correct statement and a truncated-Poisson number of distractors per item,
// or a four-option item whose last option is "None/All of the above".

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mcqlab/rng.hpp"

namespace mcqlab {

enum class ItemKind { Plain, NotaPlus, NotaMinus, AotaPlus, AotaMinus };

inline constexpr std::array<ItemKind, 5> kAllItemKinds = {
    ItemKind::Plain, ItemKind::NotaPlus, ItemKind::NotaMinus, ItemKind::AotaPlus,
    ItemKind::AotaMinus};

// PLAIN | NOTA_PLUS | NOTA_MINUS | AOTA_PLUS | AOTA_MINUS
std::string_view to_string(ItemKind kind) noexcept;
ItemKind parse_item_kind(std::string_view text);
std::optional<ItemKind> try_parse_item_kind(std::string_view text) noexcept;

inline bool is_special(ItemKind kind) noexcept { return kind != ItemKind::Plain; }

inline constexpr std::string_view kNoneOfTheAbove = "None of the above";
inline constexpr std::string_view kAllOfTheAbove = "All of the above";
inline constexpr int kMaxDistractors = 7;
inline constexpr int kSpecialOptionCount = 4;

struct HeaderTemplate {
  int header_id = 0;
  std::string stem_text;
  std::vector<std::string> correct_pool;
  std::vector<std::string> distractor_pool;

  // Pool sizes (>= 3 correct, >= 7 distractors), disjointness, no duplicates.
  void validate() const;
};

struct Item {
  int item_id = 0;
  int header_id = 0;
  std::vector<std::string> options;
  int correct_index = 0;
  ItemKind kind = ItemKind::Plain;
  int n_distractors = 0;

  int option_count() const noexcept { return static_cast<int>(options.size()); }

  // Throws ConfigError describing the first violated structural rule.
  void validate() const;

  bool operator==(const Item&) const = default;
};

struct BankSpec {
  int items_per_header = 300;
  // Indexed by ItemKind; must sum to 1.
  std::array<double, 5> kind_weights = {1.0, 0.0, 0.0, 0.0, 0.0};
  double poisson_lambda = 4.0;
  int distractor_min = 1;
  int distractor_max = kMaxDistractors;
  std::uint64_t seed = 0;

  double weight(ItemKind kind) const noexcept {
    return kind_weights[static_cast<std::size_t>(kind)];
  }
  void validate() const;
};

struct BankManifest {
  std::map<int, int> by_header;
  std::map<ItemKind, int> by_kind;
  // Distractor counts of Plain items only.
  std::map<int, int> plain_by_distractors;
  // Option-count-4 items by kind: the NOTA/AOTA analysis layout.
  std::map<ItemKind, int> four_option_by_kind;
  int total = 0;

  bool operator==(const BankManifest&) const = default;
};

struct Bank {
  std::vector<Item> items;
  BankManifest manifest;
};

// Renormalized Poisson(lambda) pmf over [lo, hi]; element i is P(K = lo + i).
std::vector<double> truncated_poisson_pmf(double lambda, int lo, int hi);

// Inverse-CDF draw from the truncated Poisson; one uniform per call.
int sample_distractor_count(double lambda, int lo, int hi, Rng& rng);

// Builds one item. n_distractors is ignored for special kinds (always 3).
// item_id is left 0 for the caller to assign.
Item assemble_item(const HeaderTemplate& header, ItemKind kind, int n_distractors, Rng& rng);

BankManifest tally_manifest(std::span<const Item> items);

// headers.size() * items_per_header items, header by header. Each header uses
// its own stream derived from spec.seed, so headers are generated in parallel
// and the result does not depend on thread count.
Bank generate_bank(const BankSpec& spec, std::span<const HeaderTemplate> headers);

// JSON forms. Headers file: array of {header_id, stem_text, correct_pool[],
// distractor_pool[]}. Bank file: {schema_version, items[], manifest}.
std::vector<HeaderTemplate> headers_from_json(const nlohmann::json& doc);
std::vector<HeaderTemplate> load_headers(const std::string& path);
nlohmann::json to_json(const Item& item);
Item item_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const BankManifest& manifest);
nlohmann::json to_json(const Bank& bank);
Bank bank_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const BankSpec& spec);
BankSpec bank_spec_from_json(const nlohmann::json& doc);

}  // namespace mcqlab
