#pragma once

// Minimal pickle reader for annotation archives: plain containers, scalars
// and numpy arrays (protocols 0-5 binary opcodes). Anything else is rejected.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace handgcn::pickle {

struct NdArray {
  std::string dtype = "f8";  // numpy kind + itemsize, e.g. "f4"
  char byte_order = '<';
  std::vector<std::int64_t> shape;
  bool fortran_order = false;
  std::string data;  // raw bytes

  std::int64_t size() const;
  std::vector<double> to_doubles() const;  // C order
};

struct Value;
using ValuePtr = std::shared_ptr<Value>;

struct Value {
  enum class Kind { None, Bool, Int, Float, Text, Bytes, Tuple, List, Dict, Global, Array, Dtype };
  Kind kind = Kind::None;
  std::int64_t integer = 0;
  double real = 0.0;
  std::string text;  // Text (UTF-8), Bytes, Global "module.name", Dtype descr
  std::vector<ValuePtr> items;
  std::vector<std::pair<ValuePtr, ValuePtr>> entries;
  std::shared_ptr<NdArray> array;
  char byte_order = '<';  // Dtype only

  bool is_string() const { return kind == Kind::Text || kind == Kind::Bytes; }
  // Dict lookup by string or integer key; nullptr when absent.
  ValuePtr get(const std::string& key) const;
  ValuePtr get(std::int64_t key) const;
};

// Throws LoadError on malformed input or unsupported content.
ValuePtr parse(const std::string& bytes);
ValuePtr load_file(const std::string& path);

}  // namespace handgcn::pickle
