#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace evtrisk {

struct PriceSeries {
  std::vector<std::string> timestamps;  // strictly increasing
  std::vector<double> prices;           // strictly positive
};

enum class ReturnKind {
  losses,  // negative log returns, large values are losses
  raw      // user-supplied values taken as-is
};

struct ReturnSeries {
  std::vector<double> values;
  ReturnKind kind = ReturnKind::losses;
  std::vector<std::string> timestamps;  // empty, or one label per value
};

/// Splits one CSV record. Quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_csv_record(std::string_view line);

/// Seconds since 1970-01-01 for "YYYY-MM-DD" with an optional "[T ]HH:MM[:SS]" suffix.
/// Throws InputError on anything else, including impossible calendar dates.
long long parse_timestamp(std::string_view text);

PriceSeries parse_prices(std::istream& in, std::string_view date_col = "date",
                         std::string_view price_col = "price");
PriceSeries load_prices(const std::filesystem::path& path, std::string_view date_col = "date",
                        std::string_view price_col = "price");

/// Reads a column of already-computed values (kind = raw). The date column is
/// optional; when present it must be strictly increasing.
ReturnSeries parse_returns(std::istream& in, std::string_view value_col = "return",
                           std::string_view date_col = "date");
ReturnSeries load_returns(const std::filesystem::path& path, std::string_view value_col = "return",
                          std::string_view date_col = "date");

/// values[t] = -log(p[t+1] / p[t]); timestamps[t] labels the later price.
ReturnSeries to_returns(const PriceSeries& series);

}  // namespace evtrisk
