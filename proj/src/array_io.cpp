#include "otkt/array_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "otkt/error.hpp"

namespace otkt {
namespace {

constexpr const char* kMagic = "OTKT-ARRAYS 1";

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

std::string read_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(std::string("arrays: unexpected end of file reading ") + what);
  return line;
}

}  // namespace

void write_arrays(std::ostream& out, const std::vector<NamedArray>& arrays) {
  out << kMagic << '\n' << "count " << arrays.size() << '\n';
  for (const NamedArray& a : arrays) {
    if (a.name.empty() || a.name.find_first_of(" \t\n") != std::string::npos) {
      throw InvalidInput("arrays: name '" + a.name + "' must be non-empty without whitespace");
    }
    out << "array " << a.name << ' ' << a.value.rows() << ' ' << a.value.cols() << '\n';
    for (double v : a.value.flat()) {
      const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
      char buf[8];
      std::memcpy(buf, &bits, 8);
      out.write(buf, 8);
    }
    out << '\n';
  }
}

std::vector<NamedArray> read_arrays(std::istream& in) {
  if (read_line(in, "magic") != kMagic) throw ParseError("arrays: bad magic line");
  std::istringstream count_line(read_line(in, "count"));
  std::string word;
  std::size_t count = 0;
  if (!(count_line >> word >> count) || word != "count") throw ParseError("arrays: bad count line");
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::istringstream header(read_line(in, "array header"));
    NamedArray a;
    std::size_t rows = 0, cols = 0;
    if (!(header >> word >> a.name >> rows >> cols) || word != "array") {
      throw ParseError("arrays: bad header for record " + std::to_string(k));
    }
    a.value = Array2(rows, cols);
    for (double& v : a.value.flat()) {
      char buf[8];
      if (!in.read(buf, 8)) throw ParseError("arrays: truncated data for '" + a.name + "'");
      std::uint64_t bits;
      std::memcpy(&bits, buf, 8);
      v = std::bit_cast<double>(to_little(bits));
    }
    if (in.get() != '\n') throw ParseError("arrays: missing record terminator after '" + a.name + "'");
    arrays.push_back(std::move(a));
  }
  return arrays;
}

void save_arrays(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  write_arrays(out, arrays);
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

std::vector<NamedArray> load_arrays(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return read_arrays(in);
}

}  // namespace otkt
