#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include "dmreuse/error.hpp"

namespace dmreuse {

/// Appends little-endian encoded values to a byte string.
class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void put_u32(std::uint32_t v) { put_le(v); }
  void put_u64(std::uint64_t v) { put_le(v); }
  void put_i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v)); }
  void put_i64(std::int64_t v) { put_le(static_cast<std::uint64_t>(v)); }
  void put_f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void put_f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void put_raw(std::string_view bytes) { buf_.append(bytes); }

  /// u32 length prefix followed by the bytes.
  void put_string(std::string_view s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }

  const std::string& bytes() const& { return buf_; }
  std::string&& take() && { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  template <typename U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
  }

  std::string buf_;
};

/// Reads little-endian values; every short read throws FormatError naming the offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t get_u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t get_u32() { return get_le<std::uint32_t>(); }
  std::uint64_t get_u64() { return get_le<std::uint64_t>(); }
  std::int32_t get_i32() { return static_cast<std::int32_t>(get_le<std::uint32_t>()); }
  std::int64_t get_i64() { return static_cast<std::int64_t>(get_le<std::uint64_t>()); }
  float get_f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

  std::string_view get_raw(std::size_t n) { return take(n); }
  std::string get_string() {
    auto n = get_u32();
    return std::string(take(n));
  }

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return data_.size() - offset_; }
  bool done() const { return offset_ == data_.size(); }

 private:
  std::string_view take(std::size_t n) {
    if (n > remaining()) {
      throw Error(ErrorCode::FormatError,
                  "unexpected end of data at byte offset " + std::to_string(offset_) + " (needed " +
                      std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left)");
    }
    auto out = data_.substr(offset_, n);
    offset_ += n;
    return out;
  }

  template <typename U>
  U get_le() {
    auto raw = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(raw[i])) << (8 * i);
    }
    return v;
  }

  std::string_view data_;
  std::size_t offset_ = 0;
};

std::string read_file(const std::string& path);
/// Writes to path.tmp, fsyncs, then renames over path.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace dmreuse
