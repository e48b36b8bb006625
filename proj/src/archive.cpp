#include "bifkit/archive.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace bifkit {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4e", v);
  return buf;
}

}  // namespace

std::string render_table(const std::vector<std::string>& columns,
                         const std::vector<std::vector<TableRow>>& blocks) {
  const int wval = 13;
  std::ostringstream out;
  out << "LABEL  TYPE ";
  for (const auto& c : columns) {
    std::string name = c.size() > size_t(wval) ? c.substr(0, wval) : c;
    out << std::string(wval - name.size() + 1, ' ') << name;
  }
  out << '\n';
  bool first = true;
  for (const auto& block : blocks) {
    if (!first) out << '\n';
    first = false;
    for (const auto& row : block) {
      char head[32];
      if (row.label > 0)
        std::snprintf(head, sizeof(head), "%5d  %-4s", row.label,
                      row.type.c_str());
      else
        std::snprintf(head, sizeof(head), "%5s  %-4s", "", row.type.c_str());
      out << head;
      for (double v : row.values) {
        std::string s = sci(v);
        out << std::string(wval - s.size() + 1, ' ') << s;
      }
      out << '\n';
    }
  }
  return out.str();
}

std::string render_csv(const std::vector<std::string>& columns,
                       const std::vector<std::vector<double>>& rows) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += "\"\"";
      q += c;
    }
    return q + "\"";
  };
  std::ostringstream out;
  for (size_t i = 0; i < columns.size(); ++i) {
    if (i) out << ',';
    out << quote(columns[i]);
  }
  out << "\r\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.16g", row[i]);
      out << buf;
    }
    out << "\r\n";
  }
  return out.str();
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::random_device rd;
  auto tmp = path;
  tmp += ".tmp" + std::to_string(rd() % 100000);
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << content;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace bifkit
