#pragma once

// Reader for numeric arrays in MATLAB level-5 MAT files, compressed or not.
// Structs, cells and char arrays are skipped.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace handgcn::mat {

struct Array {
  std::vector<std::int64_t> dims;
  std::vector<double> data;  // column-major, as stored

  // Column-major element access for a 3-D array.
  double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k))];
  }
};

// Throws LoadError with the file path on malformed input.
std::map<std::string, Array> load_file(const std::string& path);
std::map<std::string, Array> parse(const std::string& bytes);

}  // namespace handgcn::mat
