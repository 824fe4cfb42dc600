#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace imup {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

// Raised on malformed files, wire frames, or violated operation preconditions.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline Bytes to_bytes(std::string_view s) {
  return Bytes(s.begin(), s.end());
}

std::string to_hex(ByteView data);

void put_u8(Bytes& out, std::uint8_t v);
void put_u16be(Bytes& out, std::uint16_t v);
void put_u32be(Bytes& out, std::uint32_t v);
void put_u64be(Bytes& out, std::uint64_t v);
void put_bytes(Bytes& out, ByteView data);
// 4-byte big-endian length prefix, then the raw bytes.
void put_lp(Bytes& out, ByteView data);
void put_lp_string(Bytes& out, std::string_view s);

// Sequential decoder over a byte buffer. Throws Error on underflow so
// truncated files and frames fail loudly instead of reading garbage.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t u16be();
  std::uint32_t u32be();
  std::uint64_t u64be();
  Bytes take(std::size_t n);
  Bytes lp_bytes();
  std::string lp_string();
  void expect_magic(std::string_view magic);

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace imup
