#include "imup/hash.hpp"

#include <openssl/evp.h>

#include <cstring>

namespace imup {

Sha256Digest sha256(ByteView data) {
  Sha256Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size())
    throw Error("sha256 failed");
  return out;
}

Drbg::Drbg(ByteView seed) {
  key_ = sha256(seed);
}

Drbg::Drbg(std::uint64_t seed) {
  Bytes b;
  put_u64be(b, seed);
  key_ = sha256(b);
}

Bytes Drbg::bytes(std::size_t n) {
  Bytes out;
  out.reserve(n);
  while (out.size() < n) {
    if (block_used_ == block_.size()) {
      Bytes input(key_.begin(), key_.end());
      put_u64be(input, counter_++);
      block_ = sha256(input);
      block_used_ = 0;
    }
    std::size_t chunk = std::min(n - out.size(), block_.size() - block_used_);
    out.insert(out.end(), block_.begin() + block_used_, block_.begin() + block_used_ + chunk);
    block_used_ += chunk;
  }
  return out;
}

std::uint8_t Drbg::byte() { return bytes(1)[0]; }

std::uint64_t Drbg::u64() {
  Bytes b = bytes(8);
  std::uint64_t v = 0;
  for (std::uint8_t x : b) v = v << 8 | x;
  return v;
}

std::uint64_t Drbg::uniform(std::uint64_t bound) {
  if (bound == 0) throw Error("uniform bound must be nonzero");
  // Rejection sampling over the largest multiple of bound.
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  for (;;) {
    std::uint64_t v = u64();
    if (v < limit) return v % bound;
  }
}

double Drbg::unit_double() {
  return static_cast<double>(u64() >> 11) * 0x1.0p-53;
}

Drbg Drbg::child(std::uint64_t index) const {
  Bytes input(key_.begin(), key_.end());
  put_u64be(input, index);
  input.push_back(0x43);  // discriminate from the block stream
  Drbg d;
  d.key_ = sha256(input);
  return d;
}

Drbg Drbg::child(std::string_view label) const {
  Bytes input(key_.begin(), key_.end());
  put_bytes(input, to_bytes(label));
  input.push_back(0x4c);
  Drbg d;
  d.key_ = sha256(input);
  return d;
}

}  // namespace imup
