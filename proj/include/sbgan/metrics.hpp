#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace sbgan {

// Shortest round-trip-safe text for a double ("%.9g" is not enough for
// float64, so use 17 significant digits).
std::string format_number(double value);

// Append-only CSV with a leading "# config_hash=<hash>" comment line.
class CsvLog {
 public:
  // Creates the file with comment and header unless `append` is set and the
  // file already exists.
  CsvLog(const std::filesystem::path& path, std::vector<std::string> columns,
         const std::string& config_hash, bool append = false);

  void write_row(const std::vector<std::string>& cells);

  // Removes data rows whose first column (a step index) exceeds `step`.
  static void truncate_after(const std::filesystem::path& path, std::int64_t step);

 private:
  std::size_t width_;
  std::ofstream out_;
};

}  // namespace sbgan
