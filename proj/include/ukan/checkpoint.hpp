#pragma once

// Versioned binary container of named tensors plus string metadata.
//
// Layout (all integers little-endian):
//   "UKAN" | u32 version | u8 endianness (1 = little) |
//   u32 n_meta  { u32 len, key bytes, u32 len, value bytes }* |
//   u32 n_tensors { u32 len, name bytes, u8 dtype (0 f32, 1 f64), u32 rank,
//                   u64 dims[rank], u64 n_bytes, data }*

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "ukan/tensor.hpp"

namespace ukan {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

struct Checkpoint {
  static constexpr char kMagic[4] = {'U', 'K', 'A', 'N'};
  static constexpr std::uint32_t kVersion = 1;

  struct Record {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<std::uint8_t> bytes;  // little-endian element data
  };

  std::map<std::string, std::string> meta;
  std::vector<Record> tensors;

  const Record* find(const std::string& name) const {
    for (const auto& r : tensors)
      if (r.name == name) return &r;
    return nullptr;
  }

  bool has(const std::string& name) const { return find(name) != nullptr; }

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint: missing metadata '" + key + "'");
    return it->second;
  }

  template <class T>
  void put(const std::string& name, const Tensor<T>& t) {
    if (has(name)) throw CheckpointError("checkpoint: duplicate tensor '" + name + "'");
    Record r{name, dtype_of<T>(), t.shape(), {}};
    r.bytes.resize(t.numel() * sizeof(T));
    const auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) store_le(r.bytes.data() + i * sizeof(T), d[i]);
    tensors.push_back(std::move(r));
  }

  /// Copies the stored values into `dst` in place (keeping handles shared
  /// with the model valid). Name, dtype and shape must match.
  template <class T>
  void load_into(const std::string& name, Tensor<T>& dst) const {
    const Record* r = find(name);
    if (!r) throw CheckpointError("checkpoint/config mismatch: tensor '" + name + "' not in checkpoint");
    if (r->dtype != dtype_of<T>()) {
      throw CheckpointError("checkpoint/config mismatch: tensor '" + name + "' is " +
                            dtype_name(r->dtype) + ", expected " + dtype_name(dtype_of<T>()));
    }
    if (r->shape != dst.shape()) {
      throw CheckpointError("checkpoint/config mismatch: tensor '" + name + "' has shape " +
                            to_string(r->shape) + ", model expects " + to_string(dst.shape()));
    }
    auto d = dst.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = load_le<T>(r->bytes.data() + i * sizeof(T));
  }

  template <class T>
  Tensor<T> get(const std::string& name) const {
    const Record* r = find(name);
    if (!r) throw CheckpointError("checkpoint: tensor '" + name + "' not found");
    Tensor<T> t(r->shape);
    load_into(name, t);
    return t;
  }

  /// Writes to a temporary sibling and renames, so a crash never leaves a
  /// half-written checkpoint under `path`.
  void save(const std::filesystem::path& path) const {
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    out.put(1);
    put_u32(out, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      put_str(out, k);
      put_str(out, v);
    }
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& r : tensors) {
      put_str(out, r.name);
      out.put(static_cast<char>(r.dtype));
      put_u32(out, static_cast<std::uint32_t>(r.shape.size()));
      for (auto d : r.shape) put_u64(out, d);
      put_u64(out, r.bytes.size());
      out.write(reinterpret_cast<const char*>(r.bytes.data()), static_cast<std::streamsize>(r.bytes.size()));
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw CheckpointError("checkpoint: cannot write '" + tmp.string() + "'");
      const auto s = out.str();
      f.write(s.data(), static_cast<std::streamsize>(s.size()));
      if (!f) throw CheckpointError("checkpoint: write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
    const std::string where = "checkpoint '" + path.string() + "': ";
    char magic[4];
    read_exact(in, magic, 4, where);
    if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(where + "bad magic");
    const auto version = get_u32(in, where);
    if (version != kVersion)
      throw CheckpointError(where + "unsupported format version " + std::to_string(version));
    char endian;
    read_exact(in, &endian, 1, where);
    if (endian != 1) throw CheckpointError(where + "unsupported endianness flag");
    Checkpoint c;
    const auto n_meta = get_u32(in, where);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
      auto k = get_str(in, where);
      c.meta[k] = get_str(in, where);
    }
    const auto n = get_u32(in, where);
    for (std::uint32_t i = 0; i < n; ++i) {
      Record r;
      r.name = get_str(in, where);
      char dt;
      read_exact(in, &dt, 1, where);
      if (dt != 0 && dt != 1) throw CheckpointError(where + "unknown dtype in '" + r.name + "'");
      r.dtype = static_cast<DType>(dt);
      const auto rank = get_u32(in, where);
      if (rank > 16) throw CheckpointError(where + "implausible rank in '" + r.name + "'");
      for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(static_cast<std::size_t>(get_u64(in, where)));
      const auto n_bytes = get_u64(in, where);
      const std::size_t elem = r.dtype == DType::f32 ? 4 : 8;
      if (n_bytes != numel_of(r.shape) * elem)
        throw CheckpointError(where + "size mismatch in '" + r.name + "'");
      r.bytes.resize(static_cast<std::size_t>(n_bytes));
      read_exact(in, reinterpret_cast<char*>(r.bytes.data()), r.bytes.size(), where);
      c.tensors.push_back(std::move(r));
    }
    return c;
  }

 private:
  template <class U>
  static U byteswap_if_big(U v) {
    if constexpr (std::endian::native == std::endian::big) {
      U out = 0;
      for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xff);
      return out;
    }
    return v;
  }

  template <class T>
  static void store_le(std::uint8_t* dst, T v) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    const U u = byteswap_if_big(std::bit_cast<U>(v));
    std::memcpy(dst, &u, sizeof(U));
  }

  template <class T>
  static T load_le(const std::uint8_t* src) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U u;
    std::memcpy(&u, src, sizeof(U));
    return std::bit_cast<T>(byteswap_if_big(u));
  }

  static void put_u32(std::ostream& o, std::uint32_t v) {
    std::uint8_t b[4];
    store_le(b, v);
    o.write(reinterpret_cast<const char*>(b), 4);
  }
  static void put_u64(std::ostream& o, std::uint64_t v) {
    std::uint8_t b[8];
    store_le(b, v);
    o.write(reinterpret_cast<const char*>(b), 8);
  }
  static void put_str(std::ostream& o, const std::string& s) {
    put_u32(o, static_cast<std::uint32_t>(s.size()));
    o.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  static void read_exact(std::istream& in, char* dst, std::size_t n, const std::string& where) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw CheckpointError(where + "truncated file");
  }
  static std::uint32_t get_u32(std::istream& in, const std::string& where) {
    std::uint8_t b[4];
    read_exact(in, reinterpret_cast<char*>(b), 4, where);
    return load_le<std::uint32_t>(b);
  }
  static std::uint64_t get_u64(std::istream& in, const std::string& where) {
    std::uint8_t b[8];
    read_exact(in, reinterpret_cast<char*>(b), 8, where);
    return load_le<std::uint64_t>(b);
  }
  static std::string get_str(std::istream& in, const std::string& where) {
    const auto n = get_u32(in, where);
    if (n > (1u << 30)) throw CheckpointError(where + "implausible string length");
    std::string s(n, '\0');
    read_exact(in, s.data(), n, where);
    return s;
  }
};

}  // namespace ukan
