#pragma once

// RFC 4180 CSV reading and writing.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace auditllm {

struct CsvRecord {
  std::size_t line = 0;  // 1-based physical line where the record starts
  std::vector<std::string> fields;
};

/// Parses comma-separated records with double-quote quoting ("" escapes a
/// quote; quoted fields may span lines). Accepts LF or CRLF line endings and
/// a leading UTF-8 BOM. Lines that are completely empty are skipped.
/// Throws Error(malformed_quoting, count = line) on stray or unterminated
/// quotes.
std::vector<CsvRecord> parse_csv(std::string_view bytes);

/// Quotes a field when it contains a comma, quote, CR or LF.
std::string csv_field(std::string_view value);

/// Joins rows with CRLF terminators.
std::string write_csv(const std::vector<std::vector<std::string>>& rows);

}  // namespace auditllm
