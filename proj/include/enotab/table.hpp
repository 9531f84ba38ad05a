#pragma once

#include "enotab/error.hpp"
#include "enotab/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace enotab {

// -- calendar dates ---------------------------------------------------------

struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  auto operator<=>(const Date&) const = default;

  /// Canonical rendering, `YYYY-MM-DD`.
  std::string str() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
    return buf;
  }
};

inline bool is_leap_year(int y) {
  return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
}

inline int days_in_month(int y, int m) {
  static constexpr std::array<int, 12> days{31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2 && is_leap_year(y))
    return 29;
  return days[static_cast<std::size_t>(m - 1)];
}

inline std::optional<Date> make_date(int y, int m, int d) {
  if (y < 1 || y > 9999 || m < 1 || m > 12 || d < 1 || d > days_in_month(y, m))
    return std::nullopt;
  return Date{y, m, d};
}

namespace detail {

inline std::optional<int> parse_uint(std::string_view s, std::size_t min_digits, std::size_t max_digits) {
  if (s.size() < min_digits || s.size() > max_digits)
    return std::nullopt;
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    return std::nullopt;
  return v;
}

inline std::optional<int> month_from_name(std::string_view name) {
  static constexpr std::array<std::string_view, 12> names{
    "january", "february", "march", "april", "may", "june",
    "july", "august", "september", "october", "november", "december"};
  auto n = text::casefold(name);
  if (!n.empty() && n.back() == '.')
    n.pop_back();
  if (n == "sept")
    return 9;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (n == names[i] || (n.size() == 3 && names[i].substr(0, 3) == n))
      return static_cast<int>(i + 1);
  return std::nullopt;
}

} // namespace detail

/// A date with an indication of whether only the year was given.
struct ParsedDate {
  Date date;
  bool bare_year = false;
};

/// Accepts `YYYY-MM-DD`, `YYYY/MM/DD`, `MonthName D, YYYY`, `D MonthName YYYY`
/// and a bare `YYYY` (January 1, flagged as bare).
inline std::optional<ParsedDate> parse_date(std::string_view raw) {
  auto s = text::trim(raw);
  if (s.empty())
    return std::nullopt;
  if (auto y = detail::parse_uint(s, 4, 4)) {
    if (auto d = make_date(*y, 1, 1))
      return ParsedDate{*d, true};
    return std::nullopt;
  }
  for (char sep : {'-', '/'}) {
    auto p1 = s.find(sep);
    if (p1 != 4)
      continue;
    auto p2 = s.find(sep, p1 + 1);
    if (p2 == std::string_view::npos)
      continue;
    auto y = detail::parse_uint(s.substr(0, p1), 4, 4);
    auto m = detail::parse_uint(s.substr(p1 + 1, p2 - p1 - 1), 1, 2);
    auto d = detail::parse_uint(s.substr(p2 + 1), 1, 2);
    if (y && m && d)
      if (auto date = make_date(*y, *m, *d))
        return ParsedDate{*date, false};
    return std::nullopt;
  }
  std::string cleaned{s};
  std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
  auto toks = text::whitespace_tokens(cleaned);
  if (toks.size() != 3)
    return std::nullopt;
  // MonthName D YYYY
  if (auto m = detail::month_from_name(toks[0])) {
    auto d = detail::parse_uint(toks[1], 1, 2);
    auto y = detail::parse_uint(toks[2], 4, 4);
    if (d && y)
      if (auto date = make_date(*y, *m, *d))
        return ParsedDate{*date, false};
    return std::nullopt;
  }
  // D MonthName YYYY
  if (auto m = detail::month_from_name(toks[1])) {
    auto d = detail::parse_uint(toks[0], 1, 2);
    auto y = detail::parse_uint(toks[2], 4, 4);
    if (d && y)
      if (auto date = make_date(*y, *m, *d))
        return ParsedDate{*date, false};
  }
  return std::nullopt;
}

// -- numbers ----------------------------------------------------------------

/// Parses a decimal after removing thousands separators and one leading
/// currency symbol. Returns nullopt for anything else ("1-1", "12abc", ...).
inline std::optional<double> parse_number(std::string_view raw) {
  auto s = text::trim(raw);
  std::string buf;
  buf.reserve(s.size());
  bool negative = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  for (std::string_view sym : {"$", "\xe2\x82\xac", "\xc2\xa3", "\xc2\xa5"}) {
    if (s.substr(0, sym.size()) == sym) {
      s.remove_prefix(sym.size());
      break;
    }
  }
  if (negative)
    buf.push_back('-');
  for (char c : s)
    if (c != ',')
      buf.push_back(c);
  std::string_view v{buf};
  if (v.empty() || v == "-")
    return std::nullopt;
  // from_chars accepts "inf"/"nan"; restrict to digits, '.', exponent.
  bool has_digit = false;
  for (char c : v) {
    if (c >= '0' && c <= '9')
      has_digit = true;
    else if (c != '.' && c != '-' && c != '+' && c != 'e' && c != 'E')
      return std::nullopt;
  }
  if (!has_digit)
    return std::nullopt;
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out))
    return std::nullopt;
  return out == 0 ? 0.0 : out;
}

/// Shortest rendering that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  auto mag = std::fabs(v);
  auto [p, ec] = mag == 0.0 || (mag >= 1e-6 && mag < 1e15)
                   ? std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed)
                   : std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

// -- cells ------------------------------------------------------------------

struct Empty {
  bool operator==(const Empty&) const = default;
};
struct Text {
  std::string value;
  bool operator==(const Text&) const = default;
};
struct Number {
  double value = 0;
  bool operator==(const Number&) const = default;
};

using CellValue = std::variant<Empty, Text, Number, Date>;

struct Cell {
  std::string raw;
  CellValue parsed;

  bool operator==(const Cell&) const = default;
};

/// Typing precedence: Empty, Number, Date, Text.
inline CellValue type_cell(std::string_view raw) {
  if (text::trim(raw).empty())
    return Empty{};
  if (auto n = parse_number(raw))
    return Number{*n};
  if (auto d = parse_date(raw))
    return d->date;
  return Text{std::string{raw}};
}

inline Cell make_cell(std::string raw) {
  auto parsed = type_cell(raw);
  return Cell{std::move(raw), std::move(parsed)};
}

/// Canonical rendering of the typed value. Number and Date re-parse to an
/// equal value.
inline std::string render(const CellValue& v) {
  return std::visit(
    [](const auto& x) -> std::string {
      using T = std::decay_t<decltype(x)>;
      if constexpr (std::is_same_v<T, Empty>)
        return "";
      else if constexpr (std::is_same_v<T, Text>)
        return x.value;
      else if constexpr (std::is_same_v<T, Number>)
        return format_number(x.value);
      else
        return x.str();
    },
    v);
}

// -- tables -----------------------------------------------------------------

using Row = std::vector<Cell>;

inline std::string normalize_header(std::string_view h) {
  return text::collapse_whitespace(h);
}

/// Immutable rectangular table. Build through `Table::make` so that header
/// normalization and row padding always apply.
class Table {
public:
  Table() = default;

  static Table make(std::string name, std::span<const std::string> raw_headers,
                    const std::vector<std::vector<std::string>>& raw_rows,
                    std::vector<std::string>* warnings = nullptr) {
    if (raw_headers.empty())
      throw error{errc::malformed_input, "table has zero columns"};
    Table t;
    t.name_ = std::move(name);
    t.headers_ = disambiguate(raw_headers);
    t.rows_.reserve(raw_rows.size());
    for (std::size_t r = 0; r < raw_rows.size(); ++r) {
      const auto& src = raw_rows[r];
      if (src.size() < t.headers_.size() && warnings)
        warnings->push_back("row " + std::to_string(r) + ": " + std::to_string(src.size()) +
                            " cells under " + std::to_string(t.headers_.size()) +
                            " headers, padded with empty cells");
      if (src.size() > t.headers_.size() && warnings)
        warnings->push_back("row " + std::to_string(r) + ": " + std::to_string(src.size()) +
                            " cells under " + std::to_string(t.headers_.size()) +
                            " headers, truncated");
      Row row;
      row.reserve(t.headers_.size());
      for (std::size_t c = 0; c < t.headers_.size(); ++c)
        row.push_back(make_cell(c < src.size() ? src[c] : std::string{}));
      t.rows_.push_back(std::move(row));
    }
    return t;
  }

  const std::string& name() const noexcept {
    return name_;
  }
  const std::vector<std::string>& headers() const noexcept {
    return headers_;
  }
  const std::vector<Row>& rows() const noexcept {
    return rows_;
  }
  std::size_t row_count() const noexcept {
    return rows_.size();
  }
  std::size_t column_count() const noexcept {
    return headers_.size();
  }
  const Cell& cell(std::size_t row, std::size_t col) const {
    return rows_.at(row).at(col);
  }

  /// Case-insensitive, whitespace-normalized header lookup. No fuzzy matching.
  std::optional<std::size_t> find_column(std::string_view area) const {
    auto key = text::normalize(area);
    for (std::size_t i = 0; i < headers_.size(); ++i)
      if (text::normalize(headers_[i]) == key)
        return i;
    return std::nullopt;
  }

  bool operator==(const Table&) const = default;

private:
  static std::vector<std::string> disambiguate(std::span<const std::string> raw) {
    std::vector<std::string> base;
    base.reserve(raw.size());
    for (const auto& h : raw)
      base.push_back(normalize_header(h));
    std::vector<std::string> out;
    std::vector<std::string> taken; // case-folded
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto name = base[i];
      auto folded = text::casefold(name);
      if (std::find(taken.begin(), taken.end(), folded) != taken.end()) {
        auto occurrences = std::count_if(base.begin(), base.begin() + static_cast<std::ptrdiff_t>(i),
                                         [&](const std::string& b) { return text::casefold(b) == folded; });
        name = base[i] + "#" + std::to_string(occurrences + 1);
        folded = text::casefold(name);
        auto collides = [&](const std::string& other) { return text::casefold(other) == folded; };
        if (std::any_of(base.begin(), base.end(), collides) ||
            std::find(taken.begin(), taken.end(), folded) != taken.end())
          throw error{errc::duplicate_header_unresolvable,
                      "header '" + base[i] + "' cannot be disambiguated as '" + name + "'"};
      }
      taken.push_back(folded);
      out.push_back(std::move(name));
    }
    return out;
  }

  std::string name_;
  std::vector<std::string> headers_;
  std::vector<Row> rows_;
};

/// Ordered, duplicate-free selection of rows from a source table. The source
/// must outlive the subtable.
class SubTable {
public:
  SubTable() = default;

  SubTable(const Table& source, std::vector<std::size_t> indices) : source_{&source} {
    for (auto i : indices)
      if (i >= source.row_count())
        throw error{errc::index_out_of_range,
                    "row " + std::to_string(i) + " of " + std::to_string(source.row_count())};
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    rows_ = std::move(indices);
  }

  static SubTable full(const Table& source) {
    std::vector<std::size_t> all(source.row_count());
    for (std::size_t i = 0; i < all.size(); ++i)
      all[i] = i;
    return SubTable{source, std::move(all)};
  }

  const Table& source() const {
    return *source_;
  }
  bool has_source() const noexcept {
    return source_ != nullptr;
  }
  const std::vector<std::size_t>& row_indices() const noexcept {
    return rows_;
  }
  std::size_t size() const noexcept {
    return rows_.size();
  }
  bool empty() const noexcept {
    return rows_.empty();
  }

  /// Same source and same rows.
  bool operator==(const SubTable& o) const {
    return source_ == o.source_ && rows_ == o.rows_;
  }

private:
  const Table* source_ = nullptr;
  std::vector<std::size_t> rows_;
};

inline SubTable subtable(const Table& table, std::vector<std::size_t> indices) {
  return SubTable{table, std::move(indices)};
}

// -- serialization ----------------------------------------------------------

namespace detail {

inline std::string pipe_line(const std::vector<std::string>& cells) {
  return text::join(cells, " | ");
}

inline std::string pipe_row(const Row& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i)
      out += " | ";
    out += row[i].raw;
  }
  return out;
}

inline std::size_t line_tokens(std::size_t columns, std::size_t cell_tokens) {
  return cell_tokens + (columns > 0 ? columns - 1 : 0);
}

} // namespace detail

/// Headers then rows; cells joined by ` | `, rows by newline. This is the
/// rendering fed to prompts and the basis of token counting.
inline std::string serialize(const Table& t, std::span<const std::size_t> rows) {
  std::string out = detail::pipe_line(t.headers());
  for (auto r : rows) {
    out += '\n';
    out += detail::pipe_row(t.rows().at(r));
  }
  return out;
}

inline std::string serialize(const Table& t) {
  std::string out = detail::pipe_line(t.headers());
  for (const auto& row : t.rows()) {
    out += '\n';
    out += detail::pipe_row(row);
  }
  return out;
}

inline std::string serialize(const SubTable& s) {
  return serialize(s.source(), s.row_indices());
}

inline std::size_t count_tokens(const Table& t, std::span<const std::size_t> rows) {
  std::size_t header = 0;
  for (const auto& h : t.headers())
    header += text::whitespace_tokens(h).size();
  std::size_t total = detail::line_tokens(t.column_count(), header);
  for (auto r : rows) {
    std::size_t n = 0;
    for (const auto& c : t.rows().at(r))
      n += text::whitespace_tokens(c.raw).size();
    total += detail::line_tokens(t.column_count(), n);
  }
  return total;
}

/// Whitespace-token count of `serialize(t)`.
inline std::size_t count_tokens(const Table& t) {
  return count_tokens(t, SubTable::full(t).row_indices());
}

inline std::size_t count_tokens(const SubTable& s) {
  return count_tokens(s.source(), s.row_indices());
}

/// 100 * (entire - pruned) / entire, rounded half-up to one decimal.
inline double compression_rate(std::int64_t entire_tokens, std::int64_t pruned_tokens) {
  if (entire_tokens <= 0 || pruned_tokens < 0 || pruned_tokens > entire_tokens)
    throw error{errc::invalid_counts,
                "entire=" + std::to_string(entire_tokens) + " pruned=" + std::to_string(pruned_tokens)};
  // tenths = floor(1000 * saved / entire + 1/2), in exact integer arithmetic
  std::int64_t saved = entire_tokens - pruned_tokens;
  std::int64_t tenths = (2000 * saved + entire_tokens) / (2 * entire_tokens);
  return static_cast<double>(tenths) / 10.0;
}

// -- parsing ----------------------------------------------------------------

enum class TableFormat { csv, records };

namespace detail {

inline std::vector<std::vector<std::string>> parse_csv_records(std::string_view in) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_quoted = false;
  bool any = false; // current record has content

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_quoted = false;
  };
  auto end_record = [&] {
    end_field();
    bool blank = !any && record.size() == 1 && record[0].empty();
    if (!blank)
      records.push_back(std::move(record));
    record.clear();
    any = false;
  };

  for (std::size_t i = 0; i < in.size(); ++i) {
    char c = in[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < in.size() && in[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field.empty() && !field_quoted) {
          in_quotes = true;
          field_quoted = true;
          any = true;
        } else {
          field.push_back(c);
        }
        break;
      case ',':
        any = true;
        end_field();
        break;
      case '\r':
        if (i + 1 < in.size() && in[i + 1] == '\n')
          ++i;
        end_record();
        break;
      case '\n':
        end_record();
        break;
      default:
        any = true;
        field.push_back(c);
    }
  }
  if (in_quotes)
    throw error{errc::malformed_input, "unterminated quoted field"};
  if (any || !field.empty() || !record.empty())
    end_record();
  return records;
}

inline std::string json_scalar_to_raw(const nlohmann::ordered_json& v) {
  if (v.is_null())
    return "";
  if (v.is_string())
    return v.get<std::string>();
  if (v.is_structured())
    throw error{errc::malformed_input, "nested values are not supported in records"};
  return v.dump();
}

} // namespace detail

/// Parses a table. Padding and truncation of ragged rows are reported
/// through `warnings` when given.
inline Table parse_table(std::string_view input, TableFormat format, std::string name = {},
                         std::vector<std::string>* warnings = nullptr) {
  if (!text::valid_utf8(input))
    throw error{errc::malformed_input, "input is not valid UTF-8"};
  if (input.substr(0, 3) == "\xef\xbb\xbf")
    input.remove_prefix(3);

  if (format == TableFormat::csv) {
    auto records = detail::parse_csv_records(input);
    if (records.empty())
      throw error{errc::malformed_input, "no header line"};
    auto headers = std::move(records.front());
    records.erase(records.begin());
    return Table::make(std::move(name), headers, records, warnings);
  }

  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= input.size()) {
    auto nl = input.find('\n', pos);
    auto line = text::trim(input.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? input.size() + 1 : nl + 1;
    ++line_no;
    if (line.empty())
      continue;
    nlohmann::ordered_json rec;
    try {
      rec = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw error{errc::malformed_input, "line " + std::to_string(line_no) + ": " + e.what()};
    }
    if (!rec.is_object())
      throw error{errc::malformed_input, "line " + std::to_string(line_no) + ": record is not an object"};
    if (headers.empty()) {
      for (auto it = rec.begin(); it != rec.end(); ++it)
        headers.push_back(it.key());
      if (headers.empty())
        throw error{errc::malformed_input, "first record has no fields"};
    }
    std::vector<std::string> row;
    for (const auto& h : headers) {
      auto it = rec.find(h);
      if (it == rec.end()) {
        if (warnings)
          warnings->push_back("line " + std::to_string(line_no) + ": missing field '" + h + "', left empty");
        row.emplace_back();
      } else {
        row.push_back(detail::json_scalar_to_raw(*it));
      }
    }
    for (auto it = rec.begin(); it != rec.end(); ++it)
      if (std::find(headers.begin(), headers.end(), it.key()) == headers.end() && warnings)
        warnings->push_back("line " + std::to_string(line_no) + ": extra field '" + it.key() + "' dropped");
    rows.push_back(std::move(row));
  }
  if (headers.empty())
    throw error{errc::malformed_input, "no records"};
  return Table::make(std::move(name), headers, rows, warnings);
}

namespace detail {

inline std::string csv_field(std::string_view s) {
  bool quote = s.find_first_of(",\"\r\n") != std::string_view::npos || (!s.empty() && (text::is_space(s.front()) || text::is_space(s.back())));
  if (!quote)
    return std::string{s};
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += '"';
    out += c;
  }
  out += '"';
  return out;
}

} // namespace detail

/// RFC-4180 rendering of the raw cell text; `parse_table` of the result
/// reproduces the table.
inline std::string to_csv(const Table& t) {
  std::string out;
  auto line = [&](auto&& get, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (i)
        out += ',';
      out += detail::csv_field(get(i));
    }
    out += '\n';
  };
  line([&](std::size_t i) -> std::string_view { return t.headers()[i]; }, t.column_count());
  for (const auto& row : t.rows()) {
    // A single empty cell would read back as a blank line.
    if (row.size() == 1 && row[0].raw.empty()) {
      out += "\"\"\n";
      continue;
    }
    line([&](std::size_t i) -> std::string_view { return row[i].raw; }, row.size());
  }
  return out;
}

} // namespace enotab
