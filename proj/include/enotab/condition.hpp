#pragma once

#include "enotab/error.hpp"
#include "enotab/table.hpp"
#include "enotab/text.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace enotab {

enum class Action { string_match, numeric_compare, date_eval };

constexpr std::string_view to_string(Action a) {
  switch (a) {
    case Action::string_match: return "string_match";
    case Action::numeric_compare: return "numeric_compare";
    case Action::date_eval: return "date_eval";
  }
  return "";
}

inline std::optional<Action> parse_action(std::string_view s) {
  for (auto a : {Action::string_match, Action::numeric_compare, Action::date_eval})
    if (s == to_string(a))
      return a;
  return std::nullopt;
}

struct StringMatch {
  enum class Mode { equals, contains };
  Mode mode = Mode::contains;
  std::string needle; // normalized, non-empty

  bool operator==(const StringMatch&) const = default;
};

struct NumericCompare {
  enum class Op { eq, ne, lt, le, gt, ge, between };
  Op op = Op::eq;
  double low = 0;
  double high = 0; // equals `low` unless op == between

  bool operator==(const NumericCompare&) const = default;
};

struct DateEval {
  enum class Op { on, before, after, between, year_equals };
  Op op = Op::on;
  Date low;
  Date high; // equals `low` unless op == between

  bool operator==(const DateEval&) const = default;
};

using Predicate = std::variant<StringMatch, NumericCompare, DateEval>;

inline Action action_of(const Predicate& p) {
  return static_cast<Action>(p.index());
}

// -- rendering --------------------------------------------------------------

constexpr std::string_view to_string(NumericCompare::Op op) {
  using Op = NumericCompare::Op;
  switch (op) {
    case Op::eq: return "==";
    case Op::ne: return "!=";
    case Op::lt: return "<";
    case Op::le: return "<=";
    case Op::gt: return ">";
    case Op::ge: return ">=";
    case Op::between: return "between";
  }
  return "";
}

constexpr std::string_view to_string(DateEval::Op op) {
  using Op = DateEval::Op;
  switch (op) {
    case Op::on: return "on";
    case Op::before: return "before";
    case Op::after: return "after";
    case Op::between: return "between";
    case Op::year_equals: return "year_equals";
  }
  return "";
}

/// Condition text in canonical form; `parse_condition` maps it back to the
/// same predicate.
inline std::string render_condition(const Predicate& p) {
  struct {
    std::string operator()(const StringMatch& s) const {
      return std::string{s.mode == StringMatch::Mode::equals ? "equals " : "contains "} + s.needle;
    }
    std::string operator()(const NumericCompare& n) const {
      if (n.op == NumericCompare::Op::between)
        return "between " + format_number(n.low) + " and " + format_number(n.high);
      return std::string{to_string(n.op)} + " " + format_number(n.low);
    }
    std::string operator()(const DateEval& d) const {
      switch (d.op) {
        case DateEval::Op::between: return "between " + d.low.str() + " and " + d.high.str();
        case DateEval::Op::year_equals: return "year_equals " + std::to_string(d.low.year);
        default: return std::string{to_string(d.op)} + " " + d.low.str();
      }
    }
  } visitor;
  return std::visit(visitor, p);
}

/// Trace rendering, e.g. `numeric_compare(> 200000)`.
inline std::string to_string(const Predicate& p) {
  return std::string{to_string(action_of(p))} + "(" + render_condition(p) + ")";
}

// -- parsing ----------------------------------------------------------------

namespace detail {

enum class CondOp {
  none, eq, ne, lt, le, gt, ge, between, before, after, on, in, contains, equals, year_equals
};

struct OpSpelling {
  std::string_view text;
  CondOp op;
};

// Longest spellings first so that "<=" wins over "<" and "greater than or
// equal to" over "greater than".
inline constexpr std::array<OpSpelling, 7> symbol_ops{{
  {"==", CondOp::eq}, {"!=", CondOp::ne}, {"<=", CondOp::le}, {">=", CondOp::ge},
  {"<", CondOp::lt}, {">", CondOp::gt}, {"=", CondOp::eq},
}};

inline constexpr std::array<OpSpelling, 23> word_ops{{
  {"greater than or equal to", CondOp::ge},
  {"less than or equal to", CondOp::le},
  {"greater than", CondOp::gt},
  {"more than", CondOp::gt},
  {"less than", CondOp::lt},
  {"fewer than", CondOp::lt},
  {"at least", CondOp::ge},
  {"at most", CondOp::le},
  {"equal to", CondOp::eq},
  {"year_equals", CondOp::year_equals},
  {"contains", CondOp::contains},
  {"between", CondOp::between},
  {"equals", CondOp::equals},
  {"before", CondOp::before},
  {"after", CondOp::after},
  {"above", CondOp::gt},
  {"below", CondOp::lt},
  {"under", CondOp::lt},
  {"over", CondOp::gt},
  {"on", CondOp::on},
  {"in", CondOp::in},
  {"is", CondOp::eq},
  {"not", CondOp::ne},
}};

struct SplitCondition {
  CondOp op = CondOp::none;
  std::string_view rest;
};

inline SplitCondition split_operator(std::string_view s) {
  for (const auto& [spelling, op] : symbol_ops)
    if (s.substr(0, spelling.size()) == spelling)
      return {op, text::trim(s.substr(spelling.size()))};
  for (const auto& [spelling, op] : word_ops) {
    if (s.size() <= spelling.size() || !text::starts_with_ci(s, spelling) || !text::is_space(s[spelling.size()]))
      continue;
    auto rest = text::trim(s.substr(spelling.size()));
    if (!rest.empty())
      return {op, rest};
  }
  return {CondOp::none, s};
}

[[noreturn]] inline void unparsable(std::string_view cond, Action a, std::string_view why) {
  throw error{errc::unparsable_condition,
              "'" + std::string{cond} + "' as " + std::string{to_string(a)} + ": " + std::string{why}};
}

inline std::optional<std::pair<std::string_view, std::string_view>> split_between(std::string_view s) {
  auto folded = text::casefold(s);
  auto pos = folded.find(" and ");
  if (pos == std::string::npos)
    return std::nullopt;
  return std::pair{text::strip_enclosing_quotes(s.substr(0, pos)),
                   text::strip_enclosing_quotes(s.substr(pos + 5))};
}

inline Predicate parse_string_match(std::string_view cond, std::string_view body) {
  auto [op, rest] = split_operator(body);
  StringMatch out;
  switch (op) {
    case CondOp::none:
    case CondOp::eq:
    case CondOp::in:
    case CondOp::contains:
      out.mode = StringMatch::Mode::contains;
      break;
    case CondOp::equals:
      out.mode = StringMatch::Mode::equals;
      break;
    default:
      // Symbolic comparators have no string-match meaning. Comparator words
      // ("under", "before", ...) are kept as part of the needle.
      if (body.front() == '<' || body.front() == '>' || body.front() == '!')
        unparsable(cond, Action::string_match, "comparison operator on a string");
      rest = body;
  }
  out.needle = text::normalize(text::strip_enclosing_quotes(rest));
  if (out.needle.empty())
    unparsable(cond, Action::string_match, "empty needle");
  return out;
}

inline Predicate parse_numeric_compare(std::string_view cond, std::string_view body) {
  auto [op, rest] = split_operator(body);
  using Op = NumericCompare::Op;
  NumericCompare out;
  if (op == CondOp::between) {
    auto parts = split_between(rest);
    if (!parts)
      unparsable(cond, Action::numeric_compare, "between needs 'X and Y'");
    auto lo = parse_number(parts->first);
    auto hi = parse_number(parts->second);
    if (!lo || !hi)
      unparsable(cond, Action::numeric_compare, "bounds are not numbers");
    out.op = Op::between;
    out.low = std::min(*lo, *hi);
    out.high = std::max(*lo, *hi);
    return out;
  }
  switch (op) {
    case CondOp::none:
    case CondOp::eq:
    case CondOp::equals: out.op = Op::eq; break;
    case CondOp::ne: out.op = Op::ne; break;
    case CondOp::lt: out.op = Op::lt; break;
    case CondOp::le: out.op = Op::le; break;
    case CondOp::gt: out.op = Op::gt; break;
    case CondOp::ge: out.op = Op::ge; break;
    default: unparsable(cond, Action::numeric_compare, "operator is not numeric");
  }
  auto v = parse_number(text::strip_enclosing_quotes(rest));
  if (!v)
    unparsable(cond, Action::numeric_compare, "value is not a number");
  out.low = out.high = *v;
  return out;
}

inline Predicate parse_date_eval(std::string_view cond, std::string_view body) {
  auto [op, rest] = split_operator(body);
  using Op = DateEval::Op;
  DateEval out;
  if (op == CondOp::between) {
    auto parts = split_between(rest);
    if (!parts)
      unparsable(cond, Action::date_eval, "between needs 'X and Y'");
    auto lo = parse_date(parts->first);
    auto hi = parse_date(parts->second);
    if (!lo || !hi)
      unparsable(cond, Action::date_eval, "bounds are not dates");
    if (hi->date < lo->date)
      std::swap(lo, hi);
    out.op = Op::between;
    out.low = lo->date;
    // A bare upper year covers the whole year.
    out.high = hi->bare_year ? Date{hi->date.year, 12, 31} : hi->date;
    return out;
  }
  auto d = parse_date(text::strip_enclosing_quotes(rest));
  if (!d)
    unparsable(cond, Action::date_eval, "value is not a date");
  switch (op) {
    case CondOp::none:
    case CondOp::eq:
    case CondOp::equals:
    case CondOp::on:
    case CondOp::in:
      out.op = d->bare_year ? Op::year_equals : Op::on;
      out.low = d->date;
      break;
    case CondOp::year_equals:
      out.op = Op::year_equals;
      out.low = Date{d->date.year, 1, 1};
      break;
    case CondOp::lt:
    case CondOp::before:
      out.op = Op::before;
      out.low = d->date;
      break;
    case CondOp::gt:
    case CondOp::after:
      out.op = Op::after;
      out.low = d->bare_year ? Date{d->date.year, 12, 31} : d->date;
      break;
    default: unparsable(cond, Action::date_eval, "operator is not a date operator");
  }
  out.high = out.low;
  return out;
}

} // namespace detail

/// Parses an evidence condition into the canonical predicate for `action`.
/// Throws `errc::unparsable_condition` when the text cannot be coerced.
inline Predicate parse_condition(std::string_view condition, Action action) {
  auto body = text::strip_enclosing_quotes(text::trim(condition));
  if (body.empty())
    detail::unparsable(condition, action, "empty condition");
  switch (action) {
    case Action::string_match: return detail::parse_string_match(condition, body);
    case Action::numeric_compare: return detail::parse_numeric_compare(condition, body);
    case Action::date_eval: return detail::parse_date_eval(condition, body);
  }
  detail::unparsable(condition, action, "unknown action");
}

// -- evaluation -------------------------------------------------------------

namespace detail {

inline bool numbers_equal(double a, double b) {
  return std::fabs(a - b) <= 1e-9 * std::max({1.0, std::fabs(a), std::fabs(b)});
}

inline std::optional<Date> cell_date(const Cell& cell) {
  if (auto d = std::get_if<Date>(&cell.parsed))
    return *d;
  // Integral numbers in year range act as bare years.
  if (auto n = std::get_if<Number>(&cell.parsed)) {
    double y = n->value;
    if (y >= 1 && y <= 9999 && std::floor(y) == y)
      return Date{static_cast<int>(y), 1, 1};
  }
  return std::nullopt;
}

} // namespace detail

/// Total: type-mismatched cells evaluate to false.
inline bool eval_predicate(const Predicate& pred, const Cell& cell) {
  struct {
    const Cell& cell;

    bool operator()(const StringMatch& s) const {
      if (std::holds_alternative<Empty>(cell.parsed))
        return false;
      auto value = text::normalize(cell.raw);
      if (s.mode == StringMatch::Mode::equals)
        return value == s.needle;
      return value.find(s.needle) != std::string::npos;
    }

    bool operator()(const NumericCompare& n) const {
      auto num = std::get_if<Number>(&cell.parsed);
      if (!num)
        return false;
      double x = num->value;
      using Op = NumericCompare::Op;
      switch (n.op) {
        case Op::eq: return detail::numbers_equal(x, n.low);
        case Op::ne: return !detail::numbers_equal(x, n.low);
        case Op::lt: return x < n.low;
        case Op::le: return x <= n.low;
        case Op::gt: return x > n.low;
        case Op::ge: return x >= n.low;
        case Op::between: return x >= n.low && x <= n.high;
      }
      return false;
    }

    bool operator()(const DateEval& d) const {
      auto date = detail::cell_date(cell);
      if (!date)
        return false;
      using Op = DateEval::Op;
      switch (d.op) {
        case Op::on: return *date == d.low;
        case Op::before: return *date < d.low;
        case Op::after: return *date > d.low;
        case Op::between: return *date >= d.low && *date <= d.high;
        case Op::year_equals: return date->year == d.low.year;
      }
      return false;
    }
  } visitor{cell};
  return std::visit(visitor, pred);
}

} // namespace enotab
