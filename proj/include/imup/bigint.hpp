#pragma once

#include <gmpxx.h>

#include <cstddef>
#include <cstdint>

#include "imup/bytes.hpp"
#include "imup/hash.hpp"

namespace imup {

using Int = mpz_class;

std::size_t bit_width(const Int& v);
std::size_t byte_width(const Int& v);

// Fixed-width canonical big-endian encoding; throws if v does not fit.
Bytes to_fixed_be(const Int& v, std::size_t width);
Int from_be(ByteView data);

Int powm(const Int& base, const Int& exp, const Int& mod);
// Modular inverse; throws Error when gcd(v, mod) != 1.
Int invert_mod(const Int& v, const Int& mod);

// Deterministic Miller-Rabin (rounds fixed, bases derived from the candidate
// itself via SHA-256), so key generation replays identically everywhere.
bool is_prime(const Int& n, int rounds = 40);

// Uniform integer in [0, bound) drawn from the DRBG by rejection sampling.
Int uniform_below(Drbg& rng, const Int& bound);

}  // namespace imup
