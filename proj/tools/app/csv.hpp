#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace app {

// Shortest text that reads back to the same double.
std::string fmt(double x);
std::string fmt(std::uint64_t x);
inline std::string fmt(int x) { return std::to_string(x); }
inline std::string fmt(bool x) { return x ? "true" : "false"; }
inline std::string fmt(const std::string& s) { return s; }
inline std::string fmt(const char* s) { return s; }

inline constexpr const char* kVersion = "0.1.0";

// First line "# config_hash=<hash> version=<v>", then the header row. LF endings.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& config_hash, const std::vector<std::string>& header);

  template <typename... Ts>
  void row(const Ts&... cells) {
    write_row({fmt(cells)...});
  }
  void write_row(const std::vector<std::string>& cells);
  // Throws compose::InvalidArgument if any write failed.
  void close();

 private:
  std::string path_;
  std::ofstream out_;
  std::size_t columns_;
};

}  // namespace app
