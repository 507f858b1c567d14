#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pvae {

/// RFC 4180 field: quoted when it holds a comma, quote, CR or LF.
std::string csv_field(std::string_view value);
std::string csv_number(double value);

/// Header row plus data rows, CRLF-free ("\n") line endings.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add(std::vector<std::string> row);
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::string str() const;
  /// Whitespace-aligned rendering for terminals.
  std::string aligned() const;
  void write(const std::string& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Parses RFC 4180 text into rows of fields.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace pvae
