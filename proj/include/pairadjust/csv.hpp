#ifndef PAIRADJUST_CSV_HPP
#define PAIRADJUST_CSV_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace pairadjust::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column_index(const std::string& name) const;  // -1 if absent
};

// RFC-4180 style: quoted fields, embedded commas/newlines, doubled quotes.
// A UTF-8 BOM on the first line is skipped.
Table parse(std::istream& in);
Table read_file(const std::string& path);

std::string escape_field(const std::string& field);
void write_file(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows);

// Strict field parsers for hand-editable artifacts; `context` names the
// file/column in the error.
double parse_number(const std::string& field, const std::string& context);
int parse_int(const std::string& field, const std::string& context);

}  // namespace pairadjust::csv

#endif  // PAIRADJUST_CSV_HPP
