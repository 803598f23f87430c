#include "handgcn/pickle.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "handgcn/errors.hpp"

namespace handgcn::pickle {

std::int64_t NdArray::size() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

template <typename T>
T load_scalar(const char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap && sizeof(T) > 1) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  return v;
}

}  // namespace

std::vector<double> NdArray::to_doubles() const {
  const std::int64_t n = size();
  const bool swap = byte_order == '>';
  std::size_t item = 0;
  double (*read)(const char*, bool) = nullptr;
  if (dtype == "f4") { item = 4; read = [](const char* p, bool s) { return double(load_scalar<float>(p, s)); }; }
  else if (dtype == "f8") { item = 8; read = [](const char* p, bool s) { return load_scalar<double>(p, s); }; }
  else if (dtype == "i4") { item = 4; read = [](const char* p, bool s) { return double(load_scalar<std::int32_t>(p, s)); }; }
  else if (dtype == "i8") { item = 8; read = [](const char* p, bool s) { return double(load_scalar<std::int64_t>(p, s)); }; }
  else if (dtype == "i2") { item = 2; read = [](const char* p, bool s) { return double(load_scalar<std::int16_t>(p, s)); }; }
  else if (dtype == "u1" || dtype == "b1") { item = 1; read = [](const char* p, bool) { return double(static_cast<unsigned char>(*p)); }; }
  else if (dtype == "i1") { item = 1; read = [](const char* p, bool) { return double(static_cast<signed char>(*p)); }; }
  else throw LoadError("unsupported numpy dtype '" + dtype + "'");
  if (data.size() != static_cast<std::size_t>(n) * item) {
    throw LoadError("numpy array payload has " + std::to_string(data.size()) + " bytes, expected " +
                    std::to_string(n * item));
  }
  std::vector<double> out(n);
  for (std::int64_t i = 0; i < n; ++i) out[i] = read(data.data() + i * item, swap);
  if (fortran_order && shape.size() > 1) {
    // Reorder column-major storage into row-major.
    std::vector<double> c(n);
    const std::size_t rank = shape.size();
    std::vector<std::int64_t> idx(rank, 0);
    for (std::int64_t f = 0; f < n; ++f) {
      std::int64_t offset = 0;
      for (std::size_t d = 0; d < rank; ++d) offset = offset * shape[d] + idx[d];
      c[offset] = out[f];
      for (std::size_t d = 0; d < rank; ++d) {
        if (++idx[d] < shape[d]) break;
        idx[d] = 0;
      }
    }
    out.swap(c);
  }
  return out;
}

ValuePtr Value::get(const std::string& key) const {
  for (const auto& [k, v] : entries) {
    if (k->is_string() && k->text == key) return v;
  }
  return nullptr;
}

ValuePtr Value::get(std::int64_t key) const {
  for (const auto& [k, v] : entries) {
    if (k->kind == Kind::Int && k->integer == key) return v;
  }
  return nullptr;
}

namespace {

ValuePtr make(Value::Kind kind) {
  auto v = std::make_shared<Value>();
  v->kind = kind;
  return v;
}

// UTF-8 text whose code points are all < 256 back to the raw bytes; this is
// how protocol-2 pickles from Python 3 carry bytes objects.
std::string latin1_from_utf8(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      ++i;
    } else if ((c & 0xE0) == 0xC0 && i + 1 < s.size()) {
      out.push_back(static_cast<char>(((c & 0x1F) << 6) | (static_cast<unsigned char>(s[i + 1]) & 0x3F)));
      i += 2;
    } else {
      throw LoadError("latin1 payload contains a code point above 255");
    }
  }
  return out;
}

class Machine {
 public:
  explicit Machine(const std::string& bytes) : in_(bytes) {}

  ValuePtr run() {
    while (true) {
      const auto op = static_cast<unsigned char>(byte());
      switch (op) {
        case 0x80: byte(); break;                 // PROTO
        case 0x95: take(8); break;                // FRAME
        case '.': return pop();                   // STOP
        case '(': marks_.push_back(stack_.size()); break;
        case '}': push(make(Value::Kind::Dict)); break;
        case ']': push(make(Value::Kind::List)); break;
        case ')': push(make(Value::Kind::Tuple)); break;
        case 'N': push(make(Value::Kind::None)); break;
        case 0x88: push_bool(true); break;
        case 0x89: push_bool(false); break;
        case 'J': push_int(le<std::int32_t>()); break;
        case 'K': push_int(static_cast<unsigned char>(byte())); break;
        case 'M': push_int(le<std::uint16_t>()); break;
        case 0x8a: push_int(long1(static_cast<unsigned char>(byte()))); break;
        case 'I': push_text_int(line()); break;
        case 'G': {
          auto v = make(Value::Kind::Float);
          v->real = std::bit_cast<double>(be<std::uint64_t>());
          push(v);
          break;
        }
        case 'U': push_bytes(take(static_cast<unsigned char>(byte()))); break;
        case 'T': push_bytes(take(le<std::uint32_t>())); break;
        case 'C': push_bytes(take(static_cast<unsigned char>(byte()))); break;
        case 'B': push_bytes(take(le<std::uint32_t>())); break;
        case 0x8e: push_bytes(take(le<std::uint64_t>())); break;
        case 0x8c: push_text(take(static_cast<unsigned char>(byte()))); break;
        case 'X': push_text(take(le<std::uint32_t>())); break;
        case 0x8d: push_text(take(le<std::uint64_t>())); break;
        case 'q': memo_[static_cast<unsigned char>(byte())] = top(); break;
        case 'r': memo_[le<std::uint32_t>()] = top(); break;
        case 'p': memo_[std::stoul(line())] = top(); break;
        case 0x94: memo_[memo_.size()] = top(); break;
        case 'h': push(memo(static_cast<unsigned char>(byte()))); break;
        case 'j': push(memo(le<std::uint32_t>())); break;
        case 'g': push(memo(std::stoul(line()))); break;
        case 'c': {
          auto module = line();
          auto name = line();
          push_global(module + "." + name);
          break;
        }
        case 0x93: {
          auto name = pop();
          auto module = pop();
          push_global(module->text + "." + name->text);
          break;
        }
        case 't': {
          auto v = make(Value::Kind::Tuple);
          v->items = pop_mark();
          push(v);
          break;
        }
        case 0x85: case 0x86: case 0x87: {
          const int n = op - 0x84;
          auto v = make(Value::Kind::Tuple);
          v->items.resize(n);
          for (int i = n - 1; i >= 0; --i) v->items[i] = pop();
          push(v);
          break;
        }
        case 'l': {
          auto v = make(Value::Kind::List);
          v->items = pop_mark();
          push(v);
          break;
        }
        case 'd': {
          auto v = make(Value::Kind::Dict);
          auto items = pop_mark();
          for (std::size_t i = 0; i + 1 < items.size(); i += 2) v->entries.emplace_back(items[i], items[i + 1]);
          push(v);
          break;
        }
        case 'a': {
          auto item = pop();
          expect(top(), Value::Kind::List)->items.push_back(item);
          break;
        }
        case 'e': {
          auto items = pop_mark();
          auto& list = expect(top(), Value::Kind::List)->items;
          list.insert(list.end(), items.begin(), items.end());
          break;
        }
        case 's': {
          auto value = pop();
          auto key = pop();
          expect(top(), Value::Kind::Dict)->entries.emplace_back(key, value);
          break;
        }
        case 'u': {
          auto items = pop_mark();
          auto dict = expect(top(), Value::Kind::Dict);
          for (std::size_t i = 0; i + 1 < items.size(); i += 2) dict->entries.emplace_back(items[i], items[i + 1]);
          break;
        }
        case 'R': {
          auto args = pop();
          auto callable = pop();
          push(reduce(callable, args));
          break;
        }
        case 'b': {
          auto state = pop();
          build(top(), state);
          break;
        }
        default: {
          std::ostringstream msg;
          msg << "unsupported pickle opcode 0x" << std::hex << int(op) << " at offset " << pos_ - 1;
          throw LoadError(msg.str());
        }
      }
    }
  }

 private:
  char byte() {
    if (pos_ >= in_.size()) throw LoadError("truncated pickle stream");
    return in_[pos_++];
  }
  std::string take(std::uint64_t n) {
    if (n > in_.size() - pos_) throw LoadError("truncated pickle stream");
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string line() {
    const auto end = in_.find('\n', pos_);
    if (end == std::string::npos) throw LoadError("truncated pickle stream");
    std::string s = in_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return s;
  }
  template <typename T>
  T le() {
    const auto s = take(sizeof(T));
    T v;
    std::memcpy(&v, s.data(), sizeof(T));
    return v;
  }
  template <typename T>
  T be() {
    auto s = take(sizeof(T));
    std::string r(s.rbegin(), s.rend());
    T v;
    std::memcpy(&v, r.data(), sizeof(T));
    return v;
  }
  std::int64_t long1(std::size_t n) {
    if (n > 8) throw LoadError("pickle integer wider than 64 bits");
    const auto s = take(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(s[i])) << (8 * i);
    if (n > 0 && n < 8 && (static_cast<unsigned char>(s[n - 1]) & 0x80)) v |= ~std::uint64_t(0) << (8 * n);
    return static_cast<std::int64_t>(v);
  }

  void push(ValuePtr v) { stack_.push_back(std::move(v)); }
  ValuePtr pop() {
    if (stack_.empty()) throw LoadError("pickle stack underflow");
    auto v = stack_.back();
    stack_.pop_back();
    return v;
  }
  ValuePtr top() {
    if (stack_.empty()) throw LoadError("pickle stack underflow");
    return stack_.back();
  }
  std::vector<ValuePtr> pop_mark() {
    if (marks_.empty()) throw LoadError("pickle mark missing");
    const auto mark = marks_.back();
    marks_.pop_back();
    std::vector<ValuePtr> items(stack_.begin() + mark, stack_.end());
    stack_.resize(mark);
    return items;
  }
  ValuePtr memo(std::size_t key) {
    auto it = memo_.find(key);
    if (it == memo_.end()) throw LoadError("pickle memo key missing");
    return it->second;
  }
  static ValuePtr expect(ValuePtr v, Value::Kind kind) {
    if (v->kind != kind) throw LoadError("unexpected object type in pickle stream");
    return v;
  }

  void push_bool(bool b) {
    auto v = make(Value::Kind::Bool);
    v->integer = b;
    push(v);
  }
  void push_int(std::int64_t i) {
    auto v = make(Value::Kind::Int);
    v->integer = i;
    push(v);
  }
  void push_text_int(const std::string& s) {
    if (s == "00") return push_bool(false);
    if (s == "01") return push_bool(true);
    push_int(std::stoll(s));
  }
  void push_bytes(std::string s) {
    auto v = make(Value::Kind::Bytes);
    v->text = std::move(s);
    push(v);
  }
  void push_text(std::string s) {
    auto v = make(Value::Kind::Text);
    v->text = std::move(s);
    push(v);
  }
  void push_global(const std::string& name) {
    auto v = make(Value::Kind::Global);
    v->text = name;
    push(v);
  }

  ValuePtr reduce(const ValuePtr& callable, const ValuePtr& args) {
    if (callable->kind != Value::Kind::Global) throw LoadError("pickle REDUCE on a non-global");
    const auto& name = callable->text;
    const auto& a = args->items;
    if (name == "numpy.core.multiarray._reconstruct" || name == "numpy._core.multiarray._reconstruct") {
      auto v = make(Value::Kind::Array);
      v->array = std::make_shared<NdArray>();
      return v;
    }
    if (name == "numpy.dtype") {
      if (a.empty() || !a[0]->is_string()) throw LoadError("malformed numpy dtype in pickle");
      auto v = make(Value::Kind::Dtype);
      v->text = a[0]->text;
      return v;
    }
    if (name == "_codecs.encode") {
      if (a.empty() || !a[0]->is_string()) throw LoadError("malformed bytes payload in pickle");
      auto v = make(Value::Kind::Bytes);
      v->text = latin1_from_utf8(a[0]->text);
      return v;
    }
    if (name == "numpy.core.multiarray.scalar" || name == "numpy._core.multiarray.scalar") {
      if (a.size() < 2 || a[0]->kind != Value::Kind::Dtype) throw LoadError("malformed numpy scalar");
      NdArray tmp;
      tmp.dtype = a[0]->text;
      tmp.byte_order = a[0]->byte_order;
      tmp.data = a[1]->kind == Value::Kind::Text ? latin1_from_utf8(a[1]->text) : a[1]->text;
      auto v = make(Value::Kind::Float);
      v->real = tmp.to_doubles().at(0);
      return v;
    }
    throw LoadError("unsupported pickle global '" + name + "'");
  }

  void build(const ValuePtr& target, const ValuePtr& state) {
    if (target->kind == Value::Kind::Dtype) {
      if (state->items.size() > 1 && state->items[1]->is_string() && !state->items[1]->text.empty()) {
        target->byte_order = state->items[1]->text[0];
      }
      return;
    }
    if (target->kind != Value::Kind::Array) throw LoadError("pickle BUILD on an unsupported object");
    const auto& s = state->items;
    if (s.size() != 5) throw LoadError("malformed numpy array state");
    auto& arr = *target->array;
    for (const auto& d : s[1]->items) arr.shape.push_back(d->integer);
    if (s[2]->kind != Value::Kind::Dtype) throw LoadError("numpy array without dtype");
    arr.dtype = s[2]->text;
    arr.byte_order = s[2]->byte_order == '|' || s[2]->byte_order == '=' ? '<' : s[2]->byte_order;
    arr.fortran_order = s[3]->integer != 0;
    if (s[4]->kind == Value::Kind::Bytes) arr.data = s[4]->text;
    else if (s[4]->kind == Value::Kind::Text) arr.data = latin1_from_utf8(s[4]->text);
    else throw LoadError("numpy object arrays are not supported");
  }

  const std::string& in_;
  std::size_t pos_ = 0;
  std::vector<ValuePtr> stack_;
  std::vector<std::size_t> marks_;
  std::map<std::size_t, ValuePtr> memo_;
};

}  // namespace

ValuePtr parse(const std::string& bytes) { return Machine(bytes).run(); }

ValuePtr load_file(const std::string& path) {
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

}  // namespace handgcn::pickle
