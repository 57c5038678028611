#pragma once

// Named-array container used for checkpoints and corpus features.
//
//   OTKT-ARRAYS 1\n
//   count <n>\n
//   then n records, each:
//   array <name> <rows> <cols>\n
//   <rows*cols IEEE-754 doubles, little-endian, row-major>\n
//
// Headers are text so `head`/`diff -a` show what a file holds.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "otkt/params.hpp"

namespace otkt {

void write_arrays(std::ostream& out, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_arrays(std::istream& in);

void save_arrays(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_arrays(const std::filesystem::path& path);

}  // namespace otkt
