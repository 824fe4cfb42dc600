#include "imup/bigint.hpp"

namespace imup {

std::size_t bit_width(const Int& v) {
  if (v == 0) return 0;
  return mpz_sizeinbase(v.get_mpz_t(), 2);
}

std::size_t byte_width(const Int& v) {
  return (bit_width(v) + 7) / 8;
}

Bytes to_fixed_be(const Int& v, std::size_t width) {
  if (v < 0) throw Error("cannot encode negative integer");
  if (byte_width(v) > width) throw Error("integer exceeds encoding width");
  Bytes out(width, 0);
  std::size_t count = 0;
  mpz_export(out.data() + (width - byte_width(v)), &count, 1, 1, 1, 0, v.get_mpz_t());
  return out;
}

Int from_be(ByteView data) {
  Int v;
  mpz_import(v.get_mpz_t(), data.size(), 1, 1, 1, 0, data.data());
  return v;
}

Int powm(const Int& base, const Int& exp, const Int& mod) {
  Int out;
  mpz_powm(out.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(), mod.get_mpz_t());
  return out;
}

Int invert_mod(const Int& v, const Int& mod) {
  Int out;
  if (mpz_invert(out.get_mpz_t(), v.get_mpz_t(), mod.get_mpz_t()) == 0)
    throw Error("value not invertible modulo given modulus");
  return out;
}

namespace {

const std::uint32_t kSmallPrimes[] = {
    3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67,
    71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149,
    151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229,
    233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293, 307, 311, 313};

bool miller_rabin_round(const Int& n, const Int& base, const Int& d, unsigned long s) {
  Int x = powm(base, d, n);
  if (x == 1 || x == n - 1) return true;
  for (unsigned long i = 1; i < s; ++i) {
    x = x * x % n;
    if (x == n - 1) return true;
  }
  return false;
}

}  // namespace

bool is_prime(const Int& n, int rounds) {
  if (n < 2) return false;
  if (n == 2) return true;
  if (n % 2 == 0) return false;
  for (std::uint32_t p : kSmallPrimes) {
    if (n == p) return true;
    if (n % p == 0) return false;
  }

  Int d = n - 1;
  unsigned long s = mpz_scan1(d.get_mpz_t(), 0);
  mpz_tdiv_q_2exp(d.get_mpz_t(), d.get_mpz_t(), s);

  if (!miller_rabin_round(n, 2, d, s)) return false;

  // Bases are a pure function of the candidate, never of global state.
  Bytes seed = to_bytes("imup-mr");
  put_bytes(seed, to_fixed_be(n, byte_width(n)));
  Drbg rng{ByteView(seed)};
  Int span = n - 3;  // bases drawn from [2, n-2]
  for (int i = 1; i < rounds; ++i) {
    Int base = uniform_below(rng, span) + 2;
    if (!miller_rabin_round(n, base, d, s)) return false;
  }
  return true;
}

Int uniform_below(Drbg& rng, const Int& bound) {
  if (bound <= 0) throw Error("uniform_below bound must be positive");
  std::size_t bits = bit_width(bound);
  std::size_t width = (bits + 7) / 8;
  unsigned topmask = bits % 8 == 0 ? 0xff : (1u << (bits % 8)) - 1;
  for (;;) {
    Bytes buf = rng.bytes(width);
    buf[0] &= static_cast<std::uint8_t>(topmask);
    Int v = from_be(buf);
    if (v < bound) return v;
  }
}

}  // namespace imup
