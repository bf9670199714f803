#include "evtrisk/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>

#include "evtrisk/error.hpp"

namespace evtrisk {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<int> parse_digits(std::string_view s) {
  if (s.empty()) return std::nullopt;
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

std::optional<double> parse_real(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::string row_label(std::size_t row) { return "row " + std::to_string(row); }

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Table read_table(std::istream& in) {
  Table t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (!line.empty() && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      if (trim(line).empty()) continue;
      t.header = split_csv_record(line);
      for (auto& h : t.header) h = std::string(trim(h));
      have_header = true;
      continue;
    }
    if (trim(line).empty()) continue;
    t.rows.push_back(split_csv_record(line));
  }
  if (!have_header) throw InputError("CSV input is empty: a header row is required");
  return t;
}

std::optional<std::size_t> find_column(const Table& t, std::string_view name) {
  auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - t.header.begin());
}

std::size_t require_column(const Table& t, std::string_view name) {
  auto idx = find_column(t, name);
  if (!idx) throw InputError("missing column '" + std::string(name) + "'");
  return *idx;
}

const std::string& field(const Table& t, std::size_t row, std::size_t col) {
  const auto& r = t.rows[row];
  if (col >= r.size())
    throw InputError(row_label(row + 1) + ": expected at least " + std::to_string(col + 1) +
                     " fields, found " + std::to_string(r.size()));
  return r[col];
}

std::vector<std::string> read_timestamps(const Table& t, std::size_t col) {
  std::vector<std::string> out;
  out.reserve(t.rows.size());
  std::optional<long long> previous;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    std::string label(trim(field(t, i, col)));
    long long key = 0;
    try {
      key = parse_timestamp(label);
    } catch (const InputError& e) {
      throw InputError(row_label(i + 1) + ": " + e.what());
    }
    if (previous && key <= *previous)
      throw InputError(row_label(i + 1) + ": timestamps not increasing ('" + label + "')");
    previous = key;
    out.push_back(std::move(label));
  }
  return out;
}

}  // namespace

std::vector<std::string> split_csv_record(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (quoted) throw InputError("unterminated quoted field");
  fields.push_back(std::move(current));
  return fields;
}

long long parse_timestamp(std::string_view text) {
  text = trim(text);
  auto bad = [&] { return InputError("cannot parse date '" + std::string(text) + "'"); };
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') throw bad();
  auto y = parse_digits(text.substr(0, 4));
  auto m = parse_digits(text.substr(5, 2));
  auto d = parse_digits(text.substr(8, 2));
  if (!y || !m || !d) throw bad();
  std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{static_cast<unsigned>(*m)},
                                  std::chrono::day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) throw bad();
  long long seconds = static_cast<long long>(std::chrono::sys_days{ymd}.time_since_epoch().count()) * 86400;
  if (text.size() == 10) return seconds;

  std::string_view rest = text.substr(10);
  if (rest.front() != 'T' && rest.front() != ' ') throw bad();
  rest.remove_prefix(1);
  if (rest.size() != 5 && rest.size() != 8) throw bad();
  if (rest[2] != ':' || (rest.size() == 8 && rest[5] != ':')) throw bad();
  auto hh = parse_digits(rest.substr(0, 2));
  auto mm = parse_digits(rest.substr(3, 2));
  auto ss = rest.size() == 8 ? parse_digits(rest.substr(6, 2)) : std::optional<int>{0};
  if (!hh || !mm || !ss || *hh > 23 || *mm > 59 || *ss > 60) throw bad();
  return seconds + *hh * 3600LL + *mm * 60LL + *ss;
}

PriceSeries parse_prices(std::istream& in, std::string_view date_col, std::string_view price_col) {
  Table t = read_table(in);
  std::size_t dcol = require_column(t, date_col);
  std::size_t pcol = require_column(t, price_col);

  PriceSeries s;
  s.prices.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string& raw = field(t, i, pcol);
    if (trim(raw).empty()) throw InputError(row_label(i + 1) + ": blank price");
    auto value = parse_real(raw);
    if (!value) throw InputError(row_label(i + 1) + ": cannot parse price '" + raw + "'");
    if (*value <= 0.0)
      throw InputError(row_label(i + 1) + ": non-positive price " + std::string(trim(raw)));
    s.prices.push_back(*value);
  }
  s.timestamps = read_timestamps(t, dcol);
  if (s.prices.size() < 2)
    throw InputError("price series needs at least 2 rows, found " + std::to_string(s.prices.size()));
  return s;
}

PriceSeries load_prices(const std::filesystem::path& path, std::string_view date_col,
                        std::string_view price_col) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return parse_prices(in, date_col, price_col);
}

ReturnSeries parse_returns(std::istream& in, std::string_view value_col, std::string_view date_col) {
  Table t = read_table(in);
  std::size_t vcol = require_column(t, value_col);

  ReturnSeries s;
  s.kind = ReturnKind::raw;
  s.values.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string& raw = field(t, i, vcol);
    if (trim(raw).empty()) throw InputError(row_label(i + 1) + ": blank value");
    auto value = parse_real(raw);
    if (!value) throw InputError(row_label(i + 1) + ": cannot parse value '" + raw + "'");
    s.values.push_back(*value);
  }
  if (auto dcol = find_column(t, date_col)) s.timestamps = read_timestamps(t, *dcol);
  if (s.values.empty()) throw InputError("return series is empty");
  return s;
}

ReturnSeries load_returns(const std::filesystem::path& path, std::string_view value_col,
                          std::string_view date_col) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return parse_returns(in, value_col, date_col);
}

ReturnSeries to_returns(const PriceSeries& series) {
  const auto& p = series.prices;
  if (p.size() < 2) throw InputError("need at least 2 prices to form returns");
  ReturnSeries r;
  r.kind = ReturnKind::losses;
  r.values.resize(p.size() - 1);
  for (std::size_t t = 0; t + 1 < p.size(); ++t) {
    if (!(p[t] > 0.0) || !(p[t + 1] > 0.0))
      throw InputError(row_label(p[t] > 0.0 ? t + 2 : t + 1) + ": non-positive price");
    r.values[t] = -std::log(p[t + 1] / p[t]);
  }
  if (series.timestamps.size() == p.size())
    r.timestamps.assign(series.timestamps.begin() + 1, series.timestamps.end());
  return r;
}

}  // namespace evtrisk
