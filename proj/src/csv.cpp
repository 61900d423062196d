#include "pairadjust/csv.hpp"

#include <fstream>
#include <istream>
#include <sstream>

#include "pairadjust/common.hpp"

namespace pairadjust::csv {

int Table::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

Table parse(std::istream& in) {
  Table table;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  bool record_started = false;
  bool first_record = true;

  auto end_field = [&]() {
    record.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_record = [&]() {
    end_field();
    if (first_record) {
      // Strip a UTF-8 BOM from the first header cell.
      if (!record.empty() && record[0].rfind("\xEF\xBB\xBF", 0) == 0)
        record[0].erase(0, 3);
      table.header = record;
      first_record = false;
    } else {
      if (record.size() != table.header.size())
        throw ValidationError("csv: row " + std::to_string(table.rows.size() + 2) +
                              " has " + std::to_string(record.size()) +
                              " fields, expected " + std::to_string(table.header.size()));
      table.rows.push_back(record);
    }
    record.clear();
    record_started = false;
  };

  char c;
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field_started || field.empty()) {
          in_quotes = true;
          field_started = true;
          record_started = true;
        } else {
          field += c;  // stray quote mid-field, keep literal
        }
        break;
      case ',':
        end_field();
        record_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (record_started || field_started || !record.empty()) end_record();
        break;
      default:
        field += c;
        field_started = true;
        record_started = true;
    }
  }
  if (in_quotes) throw ValidationError("csv: unterminated quoted field");
  if (record_started || field_started || !record.empty()) end_record();
  if (first_record) throw ValidationError("csv: file is empty (no header row)");
  return table;
}

Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("csv: cannot open '" + path + "'");
  return parse(in);
}

std::string escape_field(const std::string& field) {
  bool needs_quote = field.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs_quote) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

double parse_number(const std::string& field, const std::string& context) {
  const std::string s = trim(field);
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (...) {
  }
  throw ValidationError(context + ": '" + field + "' is not a number");
}

int parse_int(const std::string& field, const std::string& context) {
  const std::string s = trim(field);
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos == s.size()) return v;
  } catch (...) {
  }
  throw ValidationError(context + ": '" + field + "' is not an integer");
}

void write_file(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("csv: cannot write '" + path + "'");
  auto write_record = [&](const std::vector<std::string>& rec) {
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (i) out << ',';
      out << escape_field(rec[i]);
    }
    out << '\n';
  };
  write_record(header);
  for (const auto& row : rows) write_record(row);
}

}  // namespace pairadjust::csv
