#pragma once

// Binary tensor files and checkpoints.
//
// Tensor file ("OFST"), all integers little-endian:
//   bytes 0-3   magic "OFST"
//   u16         format version (1)
//   u16         rank
//   u64 x rank  dimensions
//   f64 x numel payload, little-endian IEEE-754 (rank 0 holds one value)
//
// Checkpoint ("OFSC"): magic "OFSC", u16 version (1), u32 entry count, then per
// entry a u16 name length, the name bytes and one OFST record.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ofs/tensor.hpp"

namespace ofs {

inline constexpr std::uint16_t kTensorFormatVersion = 1;
inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename UInt>
void put_le(std::ostream& os, UInt v) {
  std::array<char, sizeof(UInt)> buf{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  os.write(buf.data(), buf.size());
}

template <typename UInt>
UInt get_le(std::istream& is, const std::string& what) {
  std::array<unsigned char, sizeof(UInt)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw FormatError(what + ": unexpected end of file");
  }
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("OFST", 4);
  detail::put_le<std::uint16_t>(os, kTensorFormatVersion);
  detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(os, d);
  for (double v : t.values()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}

inline Tensor read_tensor(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "OFST", 4) != 0) {
    throw FormatError("tensor header: bad magic, expected \"OFST\"");
  }
  const auto version = detail::get_le<std::uint16_t>(is, "tensor header");
  if (version != kTensorFormatVersion) {
    throw FormatError("tensor header: unsupported format version " + std::to_string(version));
  }
  const auto rank = detail::get_le<std::uint16_t>(is, "tensor header");
  Shape shape(rank);
  for (auto& d : shape) d = detail::get_le<std::uint64_t>(is, "tensor header dims");
  const std::size_t numel = shape_numel(shape);
  const std::size_t want = numel * sizeof(double);
  std::vector<char> raw(want);
  is.read(raw.data(), static_cast<std::streamsize>(want));
  if (static_cast<std::size_t>(is.gcount()) != want) {
    throw FormatError("tensor payload length: expected " + std::to_string(want) +
                      " bytes for shape " + shape_str(shape) + ", found " +
                      std::to_string(is.gcount()));
  }
  std::vector<double> data(numel);
  for (std::size_t i = 0; i < numel; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i * 8 + b])) << (8 * b);
    }
    data[i] = std::bit_cast<double>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_tensor: cannot open " + path + " for writing");
  write_tensor(os, t);
  if (!os) throw std::runtime_error("save_tensor: write failed for " + path);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_tensor: cannot open " + path);
  Tensor t = read_tensor(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("load_tensor: trailing bytes after payload in " + path);
  }
  return t;
}

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_checkpoint(const std::string& path, const NamedTensors& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path + " for writing");
  os.write("OFSC", 4);
  detail::put_le<std::uint16_t>(os, kCheckpointFormatVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "OFSC", 4) != 0) {
    throw FormatError("checkpoint " + path + ": bad magic, expected \"OFSC\"");
  }
  const auto version = detail::get_le<std::uint16_t>(is, "checkpoint header");
  if (version != kCheckpointFormatVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = detail::get_le<std::uint32_t>(is, "checkpoint header");
  NamedTensors entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get_le<std::uint16_t>(is, "checkpoint entry name");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (is.gcount() != len) throw FormatError("checkpoint entry name: unexpected end of file");
    entries.emplace_back(std::move(name), read_tensor(is));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint " + path + ": trailing bytes after last entry");
  }
  return entries;
}

inline const Tensor& find_entry(const NamedTensors& entries, const std::string& name) {
  for (const auto& [n, t] : entries) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint: missing entry '" + name + "'");
}

inline Tensor scalar_tensor(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

}  // namespace ofs
