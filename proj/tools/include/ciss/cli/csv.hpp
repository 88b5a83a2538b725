#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ciss::cli {

// RFC 4180 writer: CRLF line ends, fields quoted only when they contain a
// comma, quote, CR or LF.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  CsvWriter& field(std::string_view text);
  CsvWriter& field(double value);  // 17 significant digits
  CsvWriter& field(std::optional<double> value);  // empty when absent
  CsvWriter& field(long long value);
  CsvWriter& field(int value) { return field(static_cast<long long>(value)); }
  CsvWriter& field(std::size_t value) {
    return field(static_cast<long long>(value));
  }
  void end_row();

  const std::string& str() const { return out_; }

 private:
  void append(std::string_view cell);

  std::size_t columns_;
  std::size_t in_row_ = 0;
  std::string out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws ConfigError when missing.
  std::size_t column(std::string_view name) const;
};

// Parses RFC 4180 text (CRLF or LF line ends). Every row must have as many
// fields as the header.
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

// Empty cell -> nullopt; otherwise strict double parse.
std::optional<double> parse_real(std::string_view cell);

// Writes via a temporary file and rename so readers never see a partial
// file. Throws IoError.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace ciss::cli
