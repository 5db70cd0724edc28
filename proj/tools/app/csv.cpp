#include "app/csv.hpp"

#include <charconv>

#include "compose/errors.hpp"

namespace app {

std::string fmt(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string fmt(std::uint64_t x) { return std::to_string(x); }

namespace {

std::string quote(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

CsvWriter::CsvWriter(const std::string& path, const std::string& config_hash, const std::vector<std::string>& header)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc), columns_(header.size()) {
  if (!out_) throw compose::InvalidArgument("cannot write '" + path + "'");
  out_ << "# config_hash=" << config_hash << " version=" << kVersion << '\n';
  write_row(header);
}

void CsvWriter::write_row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) throw compose::InvalidArgument("csv row width mismatch in '" + path_ + "'");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << quote(cells[i]);
  }
  out_ << '\n';
}

void CsvWriter::close() {
  out_.close();
  if (out_.fail()) throw compose::InvalidArgument("failed writing '" + path_ + "'");
}

}  // namespace app
