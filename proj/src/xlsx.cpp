#include "auditllm/xlsx.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>

#include "auditllm/error.hpp"

namespace auditllm {

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::malformed_file, "unreadable xlsx workbook", what);
}

// ---------------------------------------------------------------- zip

std::uint32_t read_u32(std::string_view b, std::size_t at) {
  if (at + 4 > b.size()) malformed("truncated zip structure");
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
}

std::uint16_t read_u16(std::string_view b, std::size_t at) {
  if (at + 2 > b.size()) malformed("truncated zip structure");
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    static_cast<unsigned char>(b[at + 1]) << 8);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

std::string inflate_raw(std::string_view data, std::size_t expected) {
  std::string out(expected, '\0');
  z_stream stream{};
  if (inflateInit2(&stream, -MAX_WBITS) != Z_OK) malformed("zlib init failed");
  stream.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  stream.avail_in = static_cast<uInt>(data.size());
  stream.next_out = reinterpret_cast<Bytef*>(out.data());
  stream.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&stream, Z_FINISH);
  inflateEnd(&stream);
  if (rc != Z_STREAM_END || stream.total_out != expected) malformed("deflate stream corrupt");
  return out;
}

std::map<std::string, std::string> read_zip(std::string_view b) {
  if (b.size() < 22) malformed("file too small to be a zip archive");
  std::size_t eocd = std::string_view::npos;
  const std::size_t lowest = b.size() > 22 + 65535 ? b.size() - 22 - 65535 : 0;
  for (std::size_t at = b.size() - 22 + 1; at-- > lowest;) {
    if (read_u32(b, at) == 0x06054b50) {
      eocd = at;
      break;
    }
  }
  if (eocd == std::string_view::npos) malformed("zip end-of-central-directory not found");
  const std::size_t entries = read_u16(b, eocd + 10);
  std::size_t at = read_u32(b, eocd + 16);

  std::map<std::string, std::string> files;
  for (std::size_t e = 0; e < entries; ++e) {
    if (read_u32(b, at) != 0x02014b50) malformed("bad central directory entry");
    const auto method = read_u16(b, at + 10);
    const std::size_t csize = read_u32(b, at + 20);
    const std::size_t usize = read_u32(b, at + 24);
    const std::size_t name_len = read_u16(b, at + 28);
    const std::size_t extra_len = read_u16(b, at + 30);
    const std::size_t comment_len = read_u16(b, at + 32);
    const std::size_t local = read_u32(b, at + 42);
    if (at + 46 + name_len > b.size()) malformed("truncated central directory");
    std::string name(b.substr(at + 46, name_len));
    at += 46 + name_len + extra_len + comment_len;

    if (read_u32(b, local) != 0x04034b50) malformed("bad local file header");
    const std::size_t data_at = local + 30 + read_u16(b, local + 26) + read_u16(b, local + 28);
    if (data_at + csize > b.size()) malformed("truncated zip entry " + name);
    const auto data = b.substr(data_at, csize);
    if (method == 0) {
      files.emplace(std::move(name), std::string(data));
    } else if (method == 8) {
      files.emplace(std::move(name), inflate_raw(data, usize));
    } else {
      malformed("unsupported zip compression method");
    }
  }
  return files;
}

std::string write_zip(const std::vector<std::pair<std::string, std::string>>& files) {
  constexpr std::uint16_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01
  std::string out;
  std::string central;
  for (const auto& [name, data] : files) {
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
    const auto offset = static_cast<std::uint32_t>(out.size());
    put_u32(out, 0x04034b50);
    put_u16(out, 20);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, kDosDate);
    put_u32(out, crc);
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    put_u16(out, 0);
    out += name;
    out += data;

    put_u32(central, 0x02014b50);
    put_u16(central, 20);
    put_u16(central, 20);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, kDosDate);
    put_u32(central, crc);
    put_u32(central, static_cast<std::uint32_t>(data.size()));
    put_u32(central, static_cast<std::uint32_t>(data.size()));
    put_u16(central, static_cast<std::uint16_t>(name.size()));
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u32(central, 0);
    put_u32(central, offset);
    central += name;
  }
  const auto central_offset = static_cast<std::uint32_t>(out.size());
  out += central;
  put_u32(out, 0x06054b50);
  put_u16(out, 0);
  put_u16(out, 0);
  put_u16(out, static_cast<std::uint16_t>(files.size()));
  put_u16(out, static_cast<std::uint16_t>(files.size()));
  put_u32(out, static_cast<std::uint32_t>(central.size()));
  put_u32(out, central_offset);
  put_u16(out, 0);
  return out;
}

// ---------------------------------------------------------------- xml

struct XmlTag {
  std::string name;  // local name, namespace prefix stripped
  std::map<std::string, std::string> attrs;
  bool closing = false;
  bool self_closing = false;
};

std::string xml_unescape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '&') {
      out.push_back(s[i]);
      continue;
    }
    const auto semi = s.find(';', i);
    if (semi == std::string_view::npos) malformed("bad xml entity");
    const auto ent = s.substr(i + 1, semi - i - 1);
    if (ent == "amp") out.push_back('&');
    else if (ent == "lt") out.push_back('<');
    else if (ent == "gt") out.push_back('>');
    else if (ent == "quot") out.push_back('"');
    else if (ent == "apos") out.push_back('\'');
    else if (!ent.empty() && ent[0] == '#') {
      unsigned long cp = ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X')
                             ? std::stoul(std::string(ent.substr(2)), nullptr, 16)
                             : std::stoul(std::string(ent.substr(1)));
      if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
      } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      }
    } else {
      malformed("unknown xml entity");
    }
    i = semi;
  }
  return out;
}

std::string local_name(std::string_view qualified) {
  const auto colon = qualified.find(':');
  return std::string(colon == std::string_view::npos ? qualified : qualified.substr(colon + 1));
}

XmlTag parse_tag(std::string_view inner) {
  XmlTag tag;
  std::size_t i = 0;
  if (!inner.empty() && inner[0] == '/') {
    tag.closing = true;
    ++i;
  }
  if (!inner.empty() && inner.back() == '/') {
    tag.self_closing = true;
    inner.remove_suffix(1);
  }
  const auto name_end = inner.find_first_of(" \t\r\n", i);
  tag.name = local_name(inner.substr(i, name_end == std::string_view::npos ? inner.size() - i : name_end - i));
  std::size_t at = name_end;
  while (at != std::string_view::npos && at < inner.size()) {
    const auto eq = inner.find('=', at);
    if (eq == std::string_view::npos) break;
    auto key = inner.substr(at, eq - at);
    while (!key.empty() && std::isspace(static_cast<unsigned char>(key.front()))) key.remove_prefix(1);
    while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back()))) key.remove_suffix(1);
    auto q = eq + 1;
    while (q < inner.size() && std::isspace(static_cast<unsigned char>(inner[q]))) ++q;
    if (q >= inner.size() || (inner[q] != '"' && inner[q] != '\'')) malformed("bad xml attribute");
    const auto close = inner.find(inner[q], q + 1);
    if (close == std::string_view::npos) malformed("unterminated xml attribute");
    tag.attrs[local_name(key)] = xml_unescape(inner.substr(q + 1, close - q - 1));
    at = close + 1;
  }
  return tag;
}

/// Calls on_tag for each element tag and on_text for character data.
template <typename OnTag, typename OnText>
void scan_xml(std::string_view xml, OnTag&& on_tag, OnText&& on_text) {
  std::size_t i = 0;
  while (i < xml.size()) {
    const auto lt = xml.find('<', i);
    if (lt == std::string_view::npos) {
      on_text(xml.substr(i));
      break;
    }
    if (lt > i) on_text(xml.substr(i, lt - i));
    if (xml.compare(lt, 4, "<!--") == 0) {
      const auto end = xml.find("-->", lt);
      if (end == std::string_view::npos) malformed("unterminated xml comment");
      i = end + 3;
      continue;
    }
    if (xml.compare(lt, 9, "<![CDATA[") == 0) {
      const auto end = xml.find("]]>", lt);
      if (end == std::string_view::npos) malformed("unterminated cdata");
      on_text(xml.substr(lt + 9, end - lt - 9));
      i = end + 3;
      continue;
    }
    const auto gt = xml.find('>', lt);
    if (gt == std::string_view::npos) malformed("unterminated xml tag");
    const auto inner = xml.substr(lt + 1, gt - lt - 1);
    if (!inner.empty() && inner[0] != '?' && inner[0] != '!') on_tag(parse_tag(inner));
    i = gt + 1;
  }
}

std::vector<std::string> shared_strings(const std::string& xml) {
  std::vector<std::string> out;
  bool in_si = false;
  bool in_t = false;
  int phonetic_depth = 0;
  std::string current;
  scan_xml(
      xml,
      [&](const XmlTag& tag) {
        if (tag.name == "si") {
          if (tag.closing) {
            out.push_back(current);
            in_si = false;
          } else if (tag.self_closing) {
            out.emplace_back();
          } else {
            in_si = true;
            current.clear();
          }
        } else if (tag.name == "rPh") {
          phonetic_depth += tag.closing ? -1 : (tag.self_closing ? 0 : 1);
        } else if (tag.name == "t") {
          in_t = !tag.closing && !tag.self_closing;
        }
      },
      [&](std::string_view text) {
        if (in_si && in_t && phonetic_depth == 0) current += xml_unescape(text);
      });
  return out;
}

std::size_t column_index(const std::string& ref) {
  std::size_t col = 0;
  std::size_t i = 0;
  while (i < ref.size() && std::isalpha(static_cast<unsigned char>(ref[i]))) {
    col = col * 26 + static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(ref[i])) - 'A' + 1);
    ++i;
  }
  if (col == 0) malformed("bad cell reference " + ref);
  return col - 1;
}

std::string column_name(std::size_t index) {
  std::string name;
  for (++index; index > 0; index = (index - 1) / 26) {
    name.insert(name.begin(), static_cast<char>('A' + (index - 1) % 26));
  }
  return name;
}

std::string first_sheet_path(const std::map<std::string, std::string>& files) {
  auto workbook = files.find("xl/workbook.xml");
  auto rels = files.find("xl/_rels/workbook.xml.rels");
  if (workbook != files.end() && rels != files.end()) {
    std::optional<std::string> rel_id;
    scan_xml(
        workbook->second,
        [&](const XmlTag& tag) {
          if (!rel_id && tag.name == "sheet" && !tag.closing) {
            if (auto it = tag.attrs.find("id"); it != tag.attrs.end()) rel_id = it->second;
          }
        },
        [](std::string_view) {});
    std::optional<std::string> target;
    scan_xml(
        rels->second,
        [&](const XmlTag& tag) {
          if (tag.name == "Relationship" && rel_id) {
            auto id = tag.attrs.find("Id");
            auto tgt = tag.attrs.find("Target");
            if (id != tag.attrs.end() && tgt != tag.attrs.end() && id->second == *rel_id) target = tgt->second;
          }
        },
        [](std::string_view) {});
    if (target) {
      if (!target->empty() && target->front() == '/') return target->substr(1);
      return "xl/" + *target;
    }
  }
  return "xl/worksheets/sheet1.xml";
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default:
        if (u < 0x20 && c != '\t' && c != '\n' && c != '\r') break;  // not representable in XML 1.0
        out.push_back(c);
    }
  }
  return out;
}

}  // namespace

StringTable read_xlsx(std::string_view bytes) {
  const auto files = read_zip(bytes);
  std::vector<std::string> strings;
  if (auto it = files.find("xl/sharedStrings.xml"); it != files.end()) strings = shared_strings(it->second);
  const auto sheet = files.find(first_sheet_path(files));
  if (sheet == files.end()) malformed("workbook has no worksheet");

  StringTable table;
  std::size_t row = 0;
  std::size_t next_col = 0;
  std::size_t col = 0;
  std::string type;
  std::string value;
  enum class Capture { none, v, t } capture = Capture::none;
  bool in_cell = false;
  bool have_row = false;

  auto store = [&] {
    std::string text = value;
    if (type == "s") {
      std::size_t idx = 0;
      try {
        idx = std::stoul(value);
      } catch (const std::exception&) {
        malformed("bad shared string index");
      }
      if (idx >= strings.size()) malformed("shared string index out of range");
      text = strings[idx];
    } else if (type == "b") {
      text = value == "1" ? "TRUE" : "FALSE";
    }
    if (table.size() <= row) table.resize(row + 1);
    if (table[row].size() <= col) table[row].resize(col + 1);
    table[row][col] = std::move(text);
  };

  scan_xml(
      sheet->second,
      [&](const XmlTag& tag) {
        if (tag.name == "row" && !tag.closing) {
          if (auto it = tag.attrs.find("r"); it != tag.attrs.end()) {
            row = std::stoul(it->second) - 1;
          } else {
            row = have_row ? row + 1 : 0;
          }
          have_row = true;
          next_col = 0;
          if (table.size() <= row) table.resize(row + 1);
        } else if (tag.name == "c") {
          if (tag.closing) {
            store();
            in_cell = false;
          } else {
            auto r = tag.attrs.find("r");
            col = r != tag.attrs.end() ? column_index(r->second) : next_col;
            next_col = col + 1;
            auto t = tag.attrs.find("t");
            type = t != tag.attrs.end() ? t->second : "n";
            value.clear();
            in_cell = !tag.self_closing;
          }
        } else if (in_cell && (tag.name == "v" || tag.name == "t")) {
          capture = tag.closing || tag.self_closing ? Capture::none : (tag.name == "v" ? Capture::v : Capture::t);
        }
      },
      [&](std::string_view text) {
        if (in_cell && capture != Capture::none) value += xml_unescape(text);
      });
  std::size_t width = 0;
  for (const auto& r : table) width = std::max(width, r.size());
  for (auto& r : table) r.resize(width);
  return table;
}

std::string write_xlsx(const StringTable& rows, const std::vector<bool>& numeric_columns) {
  std::string sheet =
      "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\"?>\n"
      "<worksheet xmlns=\"http://schemas.openxmlformats.org/spreadsheetml/2006/main\"><sheetData>";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto row_ref = std::to_string(r + 1);
    sheet += "<row r=\"" + row_ref + "\">";
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const auto ref = column_name(c) + row_ref;
      const bool numeric = r > 0 && c < numeric_columns.size() && numeric_columns[c];
      if (numeric) {
        sheet += "<c r=\"" + ref + "\"><v>" + xml_escape(rows[r][c]) + "</v></c>";
      } else {
        sheet += "<c r=\"" + ref + "\" t=\"inlineStr\"><is><t xml:space=\"preserve\">" + xml_escape(rows[r][c]) +
                 "</t></is></c>";
      }
    }
    sheet += "</row>";
  }
  sheet += "</sheetData></worksheet>";

  return write_zip({
      {"[Content_Types].xml",
       "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\"?>\n"
       "<Types xmlns=\"http://schemas.openxmlformats.org/package/2006/content-types\">"
       "<Default Extension=\"rels\" ContentType=\"application/vnd.openxmlformats-package.relationships+xml\"/>"
       "<Default Extension=\"xml\" ContentType=\"application/xml\"/>"
       "<Override PartName=\"/xl/workbook.xml\" "
       "ContentType=\"application/vnd.openxmlformats-officedocument.spreadsheetml.sheet.main+xml\"/>"
       "<Override PartName=\"/xl/worksheets/sheet1.xml\" "
       "ContentType=\"application/vnd.openxmlformats-officedocument.spreadsheetml.worksheet+xml\"/>"
       "</Types>"},
      {"_rels/.rels",
       "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\"?>\n"
       "<Relationships xmlns=\"http://schemas.openxmlformats.org/package/2006/relationships\">"
       "<Relationship Id=\"rId1\" "
       "Type=\"http://schemas.openxmlformats.org/officeDocument/2006/relationships/officeDocument\" "
       "Target=\"xl/workbook.xml\"/></Relationships>"},
      {"xl/workbook.xml",
       "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\"?>\n"
       "<workbook xmlns=\"http://schemas.openxmlformats.org/spreadsheetml/2006/main\" "
       "xmlns:r=\"http://schemas.openxmlformats.org/officeDocument/2006/relationships\">"
       "<sheets><sheet name=\"Report\" sheetId=\"1\" r:id=\"rId1\"/></sheets></workbook>"},
      {"xl/_rels/workbook.xml.rels",
       "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\"?>\n"
       "<Relationships xmlns=\"http://schemas.openxmlformats.org/package/2006/relationships\">"
       "<Relationship Id=\"rId1\" "
       "Type=\"http://schemas.openxmlformats.org/officeDocument/2006/relationships/worksheet\" "
       "Target=\"worksheets/sheet1.xml\"/></Relationships>"},
      {"xl/worksheets/sheet1.xml", sheet},
  });
}

}  // namespace auditllm
