#include "auditllm/csv.hpp"

#include "auditllm/error.hpp"

namespace auditllm {

namespace {

[[noreturn]] void malformed(std::size_t line, const char* what) {
  throw Error(ErrorCode::malformed_quoting, std::string(what) + " on line " + std::to_string(line),
              "line " + std::to_string(line), line);
}

}  // namespace

std::vector<CsvRecord> parse_csv(std::string_view bytes) {
  if (bytes.substr(0, 3) == "\xEF\xBB\xBF") bytes.remove_prefix(3);

  std::vector<CsvRecord> records;
  std::size_t line = 1;
  std::size_t i = 0;
  const std::size_t n = bytes.size();

  while (i < n) {
    CsvRecord record{line, {}};
    // An empty physical line carries no record.
    if (bytes[i] == '\n' || (bytes[i] == '\r' && i + 1 < n && bytes[i + 1] == '\n')) {
      i += bytes[i] == '\r' ? 2 : 1;
      ++line;
      continue;
    }
    bool end_of_record = false;
    while (!end_of_record) {
      std::string field;
      if (i < n && bytes[i] == '"') {
        const std::size_t open_line = line;
        ++i;
        bool closed = false;
        while (i < n) {
          const char c = bytes[i];
          if (c == '"') {
            if (i + 1 < n && bytes[i + 1] == '"') {
              field.push_back('"');
              i += 2;
              continue;
            }
            ++i;
            closed = true;
            break;
          }
          if (c == '\n') ++line;
          field.push_back(c);
          ++i;
        }
        if (!closed) malformed(open_line, "unterminated quoted field");
        if (i < n && bytes[i] != ',' && bytes[i] != '\n' && !(bytes[i] == '\r' && i + 1 < n && bytes[i + 1] == '\n')) {
          malformed(line, "unexpected character after closing quote");
        }
      } else {
        while (i < n && bytes[i] != ',' && bytes[i] != '\n') {
          if (bytes[i] == '\r' && i + 1 < n && bytes[i + 1] == '\n') break;
          if (bytes[i] == '"') malformed(line, "quote inside unquoted field");
          field.push_back(bytes[i]);
          ++i;
        }
      }
      record.fields.push_back(std::move(field));

      if (i >= n) {
        end_of_record = true;
      } else if (bytes[i] == ',') {
        ++i;
      } else {
        i += bytes[i] == '\r' ? 2 : 1;
        ++line;
        end_of_record = true;
      }
    }
    records.push_back(std::move(record));
  }
  return records;
}

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string write_csv(const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out.push_back(',');
      out += csv_field(row[i]);
    }
    out += "\r\n";
  }
  return out;
}

}  // namespace auditllm
