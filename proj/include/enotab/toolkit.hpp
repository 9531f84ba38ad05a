#pragma once

#include "enotab/condition.hpp"
#include "enotab/error.hpp"
#include "enotab/table.hpp"

#include <json.hpp>

#include <algorithm>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

namespace enotab {

/// A minimal question unit grounded in one column: which column (`area`),
/// which values (`condition`) and how to match them (`action`).
struct Evidence {
  std::string area;
  std::string condition;
  Action action = Action::string_match;

  bool operator==(const Evidence&) const = default;
};

/// `{"area": "...", "condition": "...", "action": "..."}`, byte for byte.
inline std::string to_json_text(const Evidence& e) {
  return "{\"area\": " + nlohmann::json(e.area).dump() + ", \"condition\": " + nlohmann::json(e.condition).dump() +
         ", \"action\": \"" + std::string{to_string(e.action)} + "\"}";
}

inline nlohmann::ordered_json to_json(const Evidence& e) {
  nlohmann::ordered_json j;
  j["area"] = e.area;
  j["condition"] = e.condition;
  j["action"] = std::string{to_string(e.action)};
  return j;
}

/// Reads an evidence object; nullopt when a key is missing, mistyped or the
/// action is outside the closed set.
template <class Json>
std::optional<Evidence> evidence_from_json(const Json& j) {
  if (!j.is_object())
    return std::nullopt;
  auto area = j.find("area");
  auto cond = j.find("condition");
  auto act = j.find("action");
  if (area == j.end() || cond == j.end() || act == j.end())
    return std::nullopt;
  if (!area->is_string() || !act->is_string())
    return std::nullopt;
  std::string condition;
  if (cond->is_string())
    condition = cond->template get<std::string>();
  else if (cond->is_number())
    condition = cond->dump();
  else
    return std::nullopt;
  auto action = parse_action(text::casefold(text::trim(act->template get<std::string>())));
  if (!action || text::trim(area->template get<std::string>()).empty() || text::trim(condition).empty())
    return std::nullopt;
  return Evidence{area->template get<std::string>(), std::move(condition), *action};
}

/// Human-readable rendering used in prompts and highlights.
inline std::string describe(const Evidence& e) {
  return e.area + ": " + e.condition + " (" + std::string{to_string(e.action)} + ")";
}

/// Grouping key: normalized area plus action.
struct EvidenceKey {
  std::string area;
  Action action = Action::string_match;

  bool operator==(const EvidenceKey&) const = default;
};

inline EvidenceKey key_of(const Evidence& e) {
  return EvidenceKey{text::normalize(e.area), e.action};
}

/// Rows whose cell in `e.area` satisfies the parsed condition, in source
/// order. Throws UnknownColumn or UnparsableCondition.
inline SubTable apply_evidence(const Table& table, const Evidence& e) {
  if (table.column_count() == 0)
    throw error{errc::malformed_input, "table has no columns"};
  auto col = table.find_column(e.area);
  if (!col)
    throw error{errc::unknown_column, "'" + e.area + "'"};
  auto pred = parse_condition(e.condition, e.action);
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < table.row_count(); ++r)
    if (eval_predicate(pred, table.cell(r, *col)))
      rows.push_back(r);
  return SubTable{table, std::move(rows)};
}

/// True iff the evidence grounds to at least one row. Every failure,
/// semantic or mechanical, reads as false.
inline bool check_usability(const Table& table, const Evidence& e) noexcept {
  try {
    return !apply_evidence(table, e).empty();
  } catch (...) {
    return false;
  }
}

enum class MergeOp { And, Or };

constexpr std::string_view to_string(MergeOp op) {
  return op == MergeOp::And ? "and" : "or";
}

inline SubTable merge(const SubTable& left, const SubTable& right, MergeOp op) {
  if (!left.has_source() || !right.has_source() || &left.source() != &right.source())
    throw error{errc::source_mismatch, "merged subtables come from different tables"};
  const auto& a = left.row_indices();
  const auto& b = right.row_indices();
  std::vector<std::size_t> out;
  if (op == MergeOp::And)
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  else
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return SubTable{left.source(), std::move(out)};
}

} // namespace enotab
