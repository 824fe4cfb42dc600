#include "imup/bytes.hpp"

namespace imup {

std::string to_hex(ByteView data) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (std::uint8_t b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }

void put_u16be(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32be(Bytes& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8)
    out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_u64be(Bytes& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8)
    out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_bytes(Bytes& out, ByteView data) {
  out.insert(out.end(), data.begin(), data.end());
}

void put_lp(Bytes& out, ByteView data) {
  if (data.size() > 0xffffffffu) throw Error("length-prefixed field too large");
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  put_bytes(out, data);
}

void put_lp_string(Bytes& out, std::string_view s) {
  put_lp(out, ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) throw Error("truncated input");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint16_t ByteReader::u16be() {
  need(2);
  std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] << 8 | data_[pos_ + 1]);
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32be() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = v << 8 | data_[pos_ + i];
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64be() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = v << 8 | data_[pos_ + i];
  pos_ += 8;
  return v;
}

Bytes ByteReader::take(std::size_t n) {
  need(n);
  Bytes out(data_.begin() + pos_, data_.begin() + pos_ + n);
  pos_ += n;
  return out;
}

Bytes ByteReader::lp_bytes() {
  std::uint32_t n = u32be();
  return take(n);
}

std::string ByteReader::lp_string() {
  Bytes b = lp_bytes();
  return std::string(b.begin(), b.end());
}

void ByteReader::expect_magic(std::string_view magic) {
  Bytes got = take(magic.size());
  if (!std::equal(got.begin(), got.end(), magic.begin(), magic.end()))
    throw Error("bad magic, expected " + std::string(magic));
}

}  // namespace imup
