#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bifkit/contin.hpp"

namespace bifkit {

/// One rendered table row: a numbered event or an unlabeled endpoint.
struct TableRow {
  int label = 0;            // 0 = unlabeled
  std::string type;         // event label, empty for plain points
  std::vector<double> values;
};

/// Paper-style fixed-width table: LABEL / TYPE columns followed by the named
/// value columns in scientific notation with four decimals. Blocks separated
/// by a blank line.
std::string render_table(const std::vector<std::string>& columns,
                         const std::vector<std::vector<TableRow>>& blocks);

/// RFC-4180 CSV (CRLF line endings), one row per accepted point.
std::string render_csv(const std::vector<std::string>& columns,
                       const std::vector<std::vector<double>>& rows);

/// Atomic file write (temp file + rename).
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content);

}  // namespace bifkit
