#pragma once

#include <filesystem>
#include <optional>

#include "imup/bigint.hpp"
#include "imup/bytes.hpp"
#include "imup/hash.hpp"

namespace imup {

// Discrete-log chameleon hash over a prime-order subgroup:
//   CH(m, r) = g^H(m) * h^r mod p,   H(m) = SHA-256(m) mod q
// The trapdoor x (h = g^x) turns collision finding into one modular inverse.

struct ChameleonPublicKey {
  Int p;  // prime modulus
  Int q;  // prime subgroup order, q | p-1
  Int g;  // order-q generator
  Int h;  // g^x mod p

  std::size_t digest_width() const { return byte_width(p); }
  std::size_t scalar_width() const { return byte_width(q); }
  bool operator==(const ChameleonPublicKey&) const = default;
};

struct ChameleonKeyPair {
  ChameleonPublicKey pk;
  Int trapdoor;  // x in [1, q-1], secret
  bool operator==(const ChameleonKeyPair&) const = default;
};

struct ChameleonDigest {
  Int value;          // group element, 1 <= value < p
  std::uint32_t width = 0;  // canonical encoding width, fixed by p

  Bytes encoded() const { return to_fixed_be(value, width); }
  bool operator==(const ChameleonDigest&) const = default;
};

ChameleonDigest decode_digest(ByteView data);

// H: arbitrary bytes -> [0, q-1].
Int message_exponent(const ChameleonPublicKey& pk, ByteView m);

ChameleonDigest chash(const ChameleonPublicKey& pk, ByteView m, const Int& r);
// Same hash with the message exponent already reduced; the toy examples and
// some oracles drive this form directly.
ChameleonDigest chash_exponent(const ChameleonPublicKey& pk, const Int& exponent, const Int& r);

// r' with chash(m_new, r') == chash(m, r); requires the trapdoor.
Int find_collision(const ChameleonKeyPair& kp, ByteView m, const Int& r, ByteView m_new);
// Exponent-level form: r' = r + (e_old - e_new) * x^-1 mod q.
Int find_collision_exponent(const ChameleonKeyPair& kp, const Int& e_old, const Int& r,
                            const Int& e_new);

// False on any mismatch, including r outside [0, q).
bool verify_pair(const ChameleonPublicKey& pk, ByteView m, const Int& r,
                 const ChameleonDigest& expected);

// Deterministic parameter generation: q prime, p = k*q + 1 prime, seeded
// search. security_bits in [16, 3072]; subgroup order is 256 bits for real
// sizes and security_bits/2 for toy sizes.
ChameleonKeyPair keygen(unsigned security_bits, ByteView seed);

// Compiled-in toy fixture (p=23, q=11, g=2, x=3, h=8); keeps hand-checked
// examples valid independent of the generator.
ChameleonKeyPair toy_keypair();

// Throws Error describing the first violated invariant; used by tests and
// by key-file loading.
void validate_keypair(const ChameleonKeyPair& kp);

unsigned leading_zero_nibbles(ByteView data);

struct LoadedKey {
  ChameleonPublicKey pk;
  std::optional<Int> trapdoor;
};

void save_key_file(const std::filesystem::path& path, const ChameleonKeyPair& kp,
                   bool include_secret);
LoadedKey load_key_file(const std::filesystem::path& path);
ChameleonKeyPair require_trapdoor(const LoadedKey& key);

}  // namespace imup
