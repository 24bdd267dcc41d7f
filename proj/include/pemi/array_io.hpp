#ifndef PEMI_ARRAY_IO_HPP
#define PEMI_ARRAY_IO_HPP

// Named-array container shared by the encoder and trainable-state files.
//
//   magic     8 bytes ("PEMI-ENC" or "PEMI-TRN")
//   version   u32
//   header    u32 count, then per entry: u32 key length, key, i64 value
//   arrays    u32 count, then per array: u32 name length, name,
//             u32 rank, u64 dims[rank], f32 payload
//
// Every integer and float is little-endian.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pemi/errors.hpp"
#include "pemi/numcore.hpp"

namespace pemi {

inline constexpr std::uint32_t kArrayFileVersion = 1;

struct NamedArray {
  std::string name;
  TensorF value;
};

struct ArrayFile {
  std::string magic;
  std::vector<std::pair<std::string, std::int64_t>> header;
  std::vector<NamedArray> arrays;

  std::optional<std::int64_t> header_value(std::string_view key) const {
    for (const auto& [k, v] : header)
      if (k == key) return v;
    return std::nullopt;
  }

  std::int64_t require_header(std::string_view key) const {
    auto v = header_value(key);
    if (!v) throw CheckpointError("checkpoint header is missing '" + std::string(key) + "'");
    return *v;
  }

  const NamedArray* find(std::string_view name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

namespace detail {

template <class U>
U to_little_endian(U value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return value;
}

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ofstream& out) : out_(out) {}
  template <class U>
  void put(U value) {
    value = to_little_endian(value);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(U));
  }
  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ofstream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <class U>
  U get() {
    U value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(U));
    if (!in_) throw CheckpointError("truncated checkpoint " + path_);
    return to_little_endian(value);
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 20)) throw CheckpointError("corrupt string length in " + path_);
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) throw CheckpointError("truncated checkpoint " + path_);
    return s;
  }

 private:
  std::ifstream& in_;
  std::string path_;
};

}  // namespace detail

inline void write_array_file(const std::string& path, const ArrayFile& file) {
  if (file.magic.size() != 8) throw CheckpointError("array file magic must be 8 bytes");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path);
  detail::BinaryWriter w(out);
  out.write(file.magic.data(), 8);
  w.put(kArrayFileVersion);
  w.put(static_cast<std::uint32_t>(file.header.size()));
  for (const auto& [key, value] : file.header) {
    w.put_string(key);
    w.put(value);
  }
  w.put(static_cast<std::uint32_t>(file.arrays.size()));
  for (const auto& a : file.arrays) {
    w.put_string(a.name);
    w.put(static_cast<std::uint32_t>(a.value.rank()));
    for (std::size_t d : a.value.shape()) w.put(static_cast<std::uint64_t>(d));
    for (float v : a.value.values()) w.put(v);
  }
  if (!out) throw CheckpointError("failed writing " + path);
}

inline ArrayFile read_array_file(const std::string& path, std::string_view expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  ArrayFile file;
  file.magic.assign(8, '\0');
  in.read(file.magic.data(), 8);
  if (!in || file.magic != expected_magic) {
    throw CheckpointError(path + " is not a " + std::string(expected_magic) + " file");
  }
  detail::BinaryReader r(in, path);
  const auto version = r.get<std::uint32_t>();
  if (version != kArrayFileVersion) {
    throw CheckpointError(path + " has format version " + std::to_string(version) + ", expected " +
                          std::to_string(kArrayFileVersion));
  }
  const auto header_count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < header_count; ++i) {
    std::string key = r.get_string();
    file.header.emplace_back(std::move(key), r.get<std::int64_t>());
  }
  const auto array_count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < array_count; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError("array '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::size_t n = shape_size(shape);
    if (n > (std::size_t{1} << 32)) throw CheckpointError("array '" + name + "' is implausibly large");
    std::vector<float> data(n);
    for (auto& v : data) v = r.get<float>();
    file.arrays.push_back(NamedArray{std::move(name), TensorF(std::move(shape), std::move(data))});
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in " + path);
  return file;
}

// Array `name` with the given shape, or a checkpoint error naming it.
inline const TensorF& expect_array(const ArrayFile& file, const std::string& name, const Shape& shape) {
  const NamedArray* a = file.find(name);
  if (a == nullptr) throw CheckpointError("checkpoint is missing array '" + name + "'");
  if (a->value.shape() != shape) {
    throw CheckpointError("array '" + name + "' has shape " + shape_string(a->value.shape()) + ", expected " +
                          shape_string(shape));
  }
  return a->value;
}

}  // namespace pemi

#endif  // PEMI_ARRAY_IO_HPP
