#include "ciss/cli/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "ciss/error.hpp"

namespace ciss::cli {

CsvWriter::CsvWriter(std::vector<std::string> header)
    : columns_(header.size()) {
  for (const std::string& h : header) field(h);
  end_row();
}

void CsvWriter::append(std::string_view cell) {
  if (in_row_ == columns_) {
    throw ShapeError(fmt::format("csv: row already has {} fields", columns_));
  }
  if (in_row_ > 0) out_.push_back(',');
  ++in_row_;
  if (cell.find_first_of(",\"\r\n") == std::string_view::npos) {
    out_.append(cell);
    return;
  }
  out_.push_back('"');
  for (char ch : cell) {
    if (ch == '"') out_.push_back('"');
    out_.push_back(ch);
  }
  out_.push_back('"');
}

CsvWriter& CsvWriter::field(std::string_view text) {
  append(text);
  return *this;
}

CsvWriter& CsvWriter::field(double value) {
  append(fmt::format("{:.17g}", value));
  return *this;
}

CsvWriter& CsvWriter::field(std::optional<double> value) {
  if (value) return field(*value);
  append("");
  return *this;
}

CsvWriter& CsvWriter::field(long long value) {
  append(fmt::format("{}", value));
  return *this;
}

void CsvWriter::end_row() {
  if (in_row_ != columns_) {
    throw ShapeError(
        fmt::format("csv: row has {} of {} fields", in_row_, columns_));
  }
  out_.append("\r\n");
  in_row_ = 0;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw ConfigError(fmt::format("csv: missing column '{}'", name));
}

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string cell;
  bool quoted = false;
  bool cell_started = false;
  std::size_t line = 1;

  auto end_cell = [&] {
    record.push_back(std::move(cell));
    cell.clear();
    cell_started = false;
  };
  auto end_record = [&] {
    end_cell();
    records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        cell.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (cell_started) {
          throw ConfigError(
              fmt::format("csv line {}: stray quote inside a field", line));
        }
        quoted = true;
        cell_started = true;
        break;
      case ',':
        end_cell();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        [[fallthrough]];
      case '\n':
        end_record();
        ++line;
        break;
      default:
        cell.push_back(ch);
        cell_started = true;
    }
  }
  if (quoted) throw ConfigError("csv: unterminated quoted field");
  if (cell_started || !record.empty()) end_record();

  if (records.empty()) throw ConfigError("csv: no header row");
  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw ConfigError(fmt::format("csv row {}: {} fields, header has {}",
                                    r + 1, records[r].size(),
                                    table.header.size()));
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  try {
    return parse_csv(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::optional<double> parse_real(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || end != cell.data() + cell.size()) {
    throw ConfigError(fmt::format("csv: '{}' is not a number", cell));
  }
  return v;
}

void write_file_atomic(const std::filesystem::path& path,
                       std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(fmt::format("cannot open {} for writing", tmp.string()));
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    os.flush();
    if (!os) throw IoError(fmt::format("write to {} failed", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError(fmt::format("cannot move {} into place: {}", path.string(),
                              ec.message()));
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace ciss::cli
