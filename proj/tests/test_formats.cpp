#include <doctest.h>

#include <random>

#include "auditllm/csv.hpp"
#include "auditllm/error.hpp"
#include "auditllm/xlsx.hpp"
#include "support.hpp"

using namespace auditllm;
using namespace testing;

namespace {

std::vector<std::vector<std::string>> fields_of(const std::vector<CsvRecord>& records) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : records) out.push_back(r.fields);
  return out;
}

std::string random_field(std::mt19937& rng, bool allow_empty = true) {
  static const std::vector<std::string> pieces{"a", "Z", "0", " ", ",", "\"", "\n", "\r\n", "\t", "<", "&", ">",
                                               "'", "\xc3\xa9", "\xe2\x80\xa2", "sky", "42", ";"};
  std::string out;
  const int n = static_cast<int>(rng() % 7);
  for (int i = 0; i < n; ++i) out += pieces[rng() % pieces.size()];
  if (!allow_empty && out.empty()) out = "x";
  return out;
}

}  // namespace

TEST_CASE("parse_csv examples") {
  CHECK(fields_of(parse_csv("a,b\r\n1,2\r\n")) == std::vector<std::vector<std::string>>{{"a", "b"}, {"1", "2"}});
  CHECK(fields_of(parse_csv("a,b\n1,2")) == std::vector<std::vector<std::string>>{{"a", "b"}, {"1", "2"}});
  CHECK(fields_of(parse_csv("\"x, y\",\"say \"\"hi\"\"\"\n")) ==
        std::vector<std::vector<std::string>>{{"x, y", "say \"hi\""}});
  CHECK(fields_of(parse_csv("\"multi\nline\",z\n")) == std::vector<std::vector<std::string>>{{"multi\nline", "z"}});
  CHECK(fields_of(parse_csv(",,\n")) == std::vector<std::vector<std::string>>{{"", "", ""}});
  CHECK(parse_csv("").empty());
}

TEST_CASE("parse_csv strips a UTF-8 byte order mark and skips empty lines") {
  const auto records = parse_csv("\xef\xbb\xbfquestion\n\nWhy?\n");
  REQUIRE(records.size() == 2);
  CHECK(records[0].fields == std::vector<std::string>{"question"});
  CHECK(records[1].fields == std::vector<std::string>{"Why?"});
  CHECK(records[1].line == 3);
}

TEST_CASE("parse_csv line numbers count physical lines") {
  const auto records = parse_csv("h\n\"a\nb\"\nc\n");
  REQUIRE(records.size() == 3);
  CHECK(records[1].line == 2);
  CHECK(records[2].line == 4);
}

TEST_CASE("parse_csv quoting errors report the line") {
  auto expect_line = [](std::string_view text, std::size_t line) {
    try {
      parse_csv(text);
      FAIL("expected malformed_quoting for " << text);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::malformed_quoting);
      CHECK(e.count() == line);
    }
  };
  expect_line("a\n\"open", 2);
  expect_line("a\nb\"c\n", 2);
  expect_line("a\n\"closed\"junk\n", 2);
}

TEST_CASE("csv_field quotes only when needed") {
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"x\"") == "\"say \"\"x\"\"\"");
  CHECK(csv_field("line\nbreak") == "\"line\nbreak\"");
  CHECK(csv_field("cr\r") == "\"cr\r\"");
  CHECK(csv_field("") == "");
  CHECK(write_csv({{"a", "b,c"}, {"1", ""}}) == "a,\"b,c\"\r\n1,\r\n");
}

TEST_CASE("property: write_csv then parse_csv is the identity") {
  std::mt19937 rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t cols = 1 + rng() % 5;
    std::vector<std::vector<std::string>> rows(1 + rng() % 6);
    for (auto& row : rows) {
      for (std::size_t c = 0; c < cols; ++c) row.push_back(random_field(rng));
      // A lone empty field serializes to an empty line, which is skipped.
      if (cols == 1 && row[0].empty()) row[0] = "x";
    }
    CHECK(fields_of(parse_csv(write_csv(rows))) == rows);
  }
}

TEST_CASE("read_xlsx rejects non-workbooks") {
  CHECK_ERROR_CODE(read_xlsx(""), ErrorCode::malformed_file);
  CHECK_ERROR_CODE(read_xlsx("question,reference_answer\n"), ErrorCode::malformed_file);
  std::string truncated = write_xlsx({{"a"}});
  truncated.resize(truncated.size() / 2);
  CHECK_ERROR_CODE(read_xlsx(truncated), ErrorCode::malformed_file);
}

TEST_CASE("read_xlsx on third-party workbooks") {
  const auto a = read_xlsx(slurp(std::string(AUDITLLM_TEST_DATA_DIR) + "/openpyxl_questions.xlsx"));
  REQUIRE(a.size() == 4);
  CHECK(a[0] == std::vector<std::string>{"question", "reference_answer"});
  CHECK(a[2][1].empty());

  const auto b = read_xlsx(slurp(std::string(AUDITLLM_TEST_DATA_DIR) + "/xlsxwriter_questions.xlsx"));
  REQUIRE(b.size() >= 7);
  CHECK(b[0] == std::vector<std::string>{"reference_answer", "question"});
  CHECK(b[2][1] == "Is it safe to eat & drink <here>?");
  CHECK(b[6][1] == "42");
}

TEST_CASE("write_xlsx is byte-stable and keeps numeric columns numeric") {
  const StringTable rows{{"id", "score"}, {"1", "0.1235"}, {"2", "1.0000"}};
  const auto bytes = write_xlsx(rows, {false, true});
  CHECK(bytes == write_xlsx(rows, {false, true}));
  CHECK(bytes.rfind("PK", 0) == 0);
  const auto back = read_xlsx(bytes);
  REQUIRE(back.size() == 3);
  CHECK(back[0] == rows[0]);
  CHECK(back[1][0] == "1");
  CHECK(std::stod(back[1][1]) == 0.1235);
  CHECK(std::stod(back[2][1]) == 1.0);
}

TEST_CASE("property: write_xlsx then read_xlsx is the identity on text cells") {
  std::mt19937 rng(2024);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t cols = 1 + rng() % 5;
    StringTable rows(1 + rng() % 6);
    for (auto& row : rows) {
      for (std::size_t c = 0; c + 1 < cols; ++c) row.push_back(random_field(rng));
      // Non-empty last cell so the row width is unambiguous.
      row.push_back(random_field(rng, false));
    }
    const auto back = read_xlsx(write_xlsx(rows));
    CHECK(back == rows);
  }
}
