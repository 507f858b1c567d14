#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>

#include "pvae/errors.hpp"

namespace pvae::bin {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

/// Append-only little-endian byte sink.
class Writer {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    const T le = to_little(v);
    buffer_.append(reinterpret_cast<const char*>(&le), sizeof(T));
  }
  void put_bytes(std::string_view bytes) { buffer_.append(bytes); }

  const std::string& bytes() const { return buffer_; }

 private:
  std::string buffer_;
};

/// Bounds-checked little-endian reader; errors name the byte range that is
/// missing.
class Reader {
 public:
  Reader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    require(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }

  std::string_view get_bytes(std::size_t n) {
    require(n);
    const auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void require(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw DataError(source_ + ": truncated, needed bytes [" + std::to_string(pos_) + ", " +
                      std::to_string(pos_ + n) + ") but file has " + std::to_string(data_.size()));
    }
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  std::string_view data_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace pvae::bin
