#include "sbgan/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "sbgan/errors.hpp"

namespace sbgan {

std::string format_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

CsvLog::CsvLog(const std::filesystem::path& path, std::vector<std::string> columns,
               const std::string& config_hash, bool append)
    : width_(columns.size()) {
  const bool exists = std::filesystem::exists(path);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  if (!(append && exists)) {
    out_ << "# config_hash=" << config_hash << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << "\n";
    out_.flush();
  }
}

void CsvLog::write_row(const std::vector<std::string>& cells) {
  if (cells.size() != width_) fail(ErrorKind::Argument, "CSV row width does not match the header");
  for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
  out_ << "\n";
  out_.flush();
}

void CsvLog::truncate_after(const std::filesystem::path& path, std::int64_t step) {
  std::ifstream in(path);
  if (!in) return;
  std::ostringstream kept;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#' || !header_seen) {
      header_seen = header_seen || line[0] != '#';
      kept << line << "\n";
      continue;
    }
    const auto first = line.substr(0, line.find(','));
    if (std::stoll(first) <= step) kept << line << "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept.str();
}

}  // namespace sbgan
