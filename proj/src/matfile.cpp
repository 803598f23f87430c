#include "handgcn/matfile.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "handgcn/errors.hpp"

namespace handgcn::mat {

namespace {

enum : std::uint32_t {
  miINT8 = 1, miUINT8 = 2, miINT16 = 3, miUINT16 = 4, miINT32 = 5, miUINT32 = 6,
  miSINGLE = 7, miDOUBLE = 9, miINT64 = 12, miUINT64 = 13, miMATRIX = 14, miCOMPRESSED = 15,
};

// Numeric array classes: mxDOUBLE_CLASS .. mxUINT64_CLASS.
bool numeric_class(std::uint32_t c) { return c >= 6 && c <= 15; }

struct Element {
  std::uint32_t type = 0;
  std::string data;
};

class Cursor {
 public:
  explicit Cursor(const std::string& buf, std::size_t pos = 0) : buf_(buf), pos_(pos) {}
  bool done() const { return pos_ >= buf_.size(); }

  Element next() {
    std::uint32_t type = u32(), size = 0;
    Element e;
    if (type >> 16) {  // small data element packed into the tag
      size = type >> 16;
      e.type = type & 0xFFFF;
      e.data = take(4).substr(0, size);
      return e;
    }
    size = u32();
    e.type = type;
    e.data = take(size);
    if (type != miCOMPRESSED) skip((8 - size % 8) % 8);
    return e;
  }

 private:
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v;
    std::memcpy(&v, s.data(), 4);
    return v;
  }
  std::string take(std::size_t n) {
    if (n > buf_.size() - pos_) throw LoadError("truncated MAT element");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) { pos_ = std::min(buf_.size(), pos_ + n); }

  const std::string& buf_;
  std::size_t pos_;
};

std::string inflate_all(const std::string& in) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw LoadError("zlib initialisation failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  std::string out;
  char chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(chunk);
    zs.avail_out = sizeof(chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw LoadError("corrupt compressed MAT element");
    }
    out.append(chunk, sizeof(chunk) - zs.avail_out);
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) break;
  }
  inflateEnd(&zs);
  return out;
}

template <typename T>
void append_as_double(const std::string& raw, std::vector<double>& out) {
  const std::size_t n = raw.size() / sizeof(T);
  out.reserve(out.size() + n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    out.push_back(static_cast<double>(v));
  }
}

std::vector<double> numeric(const Element& e) {
  std::vector<double> out;
  switch (e.type) {
    case miINT8: append_as_double<std::int8_t>(e.data, out); break;
    case miUINT8: append_as_double<std::uint8_t>(e.data, out); break;
    case miINT16: append_as_double<std::int16_t>(e.data, out); break;
    case miUINT16: append_as_double<std::uint16_t>(e.data, out); break;
    case miINT32: append_as_double<std::int32_t>(e.data, out); break;
    case miUINT32: append_as_double<std::uint32_t>(e.data, out); break;
    case miSINGLE: append_as_double<float>(e.data, out); break;
    case miDOUBLE: append_as_double<double>(e.data, out); break;
    case miINT64: append_as_double<std::int64_t>(e.data, out); break;
    case miUINT64: append_as_double<std::uint64_t>(e.data, out); break;
    default: throw LoadError("unsupported MAT numeric type " + std::to_string(e.type));
  }
  return out;
}

void read_matrix(const std::string& body, std::map<std::string, Array>& out) {
  Cursor c(body);
  const auto flags = numeric(c.next());
  if (flags.empty()) throw LoadError("MAT matrix without array flags");
  const auto cls = static_cast<std::uint32_t>(flags[0]) & 0xFF;
  if (!numeric_class(cls)) return;
  Array a;
  for (double d : numeric(c.next())) a.dims.push_back(static_cast<std::int64_t>(d));
  const auto name = c.next().data;
  a.data = numeric(c.next());  // real part; any imaginary part is ignored
  std::int64_t count = 1;
  for (auto d : a.dims) count *= d;
  if (static_cast<std::int64_t>(a.data.size()) != count) {
    throw LoadError("MAT array '" + name + "' has " + std::to_string(a.data.size()) +
                    " values, expected " + std::to_string(count));
  }
  out[name] = std::move(a);
}

void read_elements(Cursor& c, std::map<std::string, Array>& out) {
  while (!c.done()) {
    const auto e = c.next();
    if (e.type == miCOMPRESSED) {
      const auto inflated = inflate_all(e.data);
      Cursor inner(inflated);
      read_elements(inner, out);
    } else if (e.type == miMATRIX) {
      read_matrix(e.data, out);
    }
  }
}

}  // namespace

std::map<std::string, Array> parse(const std::string& bytes) {
  if (bytes.size() < 128) throw LoadError("file too short for a MAT header");
  if (bytes.compare(126, 2, "IM") != 0) {
    throw LoadError("not a little-endian level-5 MAT file");
  }
  std::map<std::string, Array> out;
  Cursor c(bytes, 128);
  read_elements(c, out);
  return out;
}

std::map<std::string, Array> load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse(buffer.str());
  } catch (const LoadError& e) {
    throw LoadError(path + ": " + e.what());
  }
}

}  // namespace handgcn::mat
