#pragma once

// Minimal Office Open XML spreadsheet adapter: enough to read the first
// worksheet of a workbook as a table of strings and to write a
// single-sheet workbook.

#include <string>
#include <string_view>
#include <vector>

namespace auditllm {

using StringTable = std::vector<std::vector<std::string>>;

/// Cells of the first worksheet, row-major, padded to a rectangle.
/// Missing cells become "".
/// Shared, inline and plain-value cells are all returned as their text.
/// Throws Error(malformed_file) on anything that is not a readable workbook.
StringTable read_xlsx(std::string_view bytes);

/// Writes `rows` to a one-sheet workbook. Columns flagged in
/// `numeric_columns` are written as number cells (their text must already
/// be a valid number); the rest as inline strings. Output is byte-stable.
std::string write_xlsx(const StringTable& rows, const std::vector<bool>& numeric_columns = {});

}  // namespace auditllm
