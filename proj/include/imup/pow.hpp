#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "imup/chameleon.hpp"

namespace imup {

// Proof of work where the task is iterated chameleon hashing: scan nonces
// until chash(m || nonce_be64, r0=1) has the required number of leading zero
// hex nibbles in its canonical encoding. Solving is geometric in the
// difficulty; verification is a single hash no matter what d is.

struct PowChallenge {
  static constexpr std::string_view kTaskTag = "CHASH-ITER";
  Bytes message;
  unsigned difficulty = 0;  // leading zero nibbles required
};

struct PowSolution {
  std::uint64_t nonce = 0;
  Bytes b_hash;  // canonical digest encoding meeting the difficulty
};

// Bounds check: 0 <= d <= 2 * digest width.
bool difficulty_in_range(const ChameleonPublicKey& pk, unsigned difficulty);

// Smallest satisfying nonce, or nullopt once max_nonce trials are exhausted.
// Honors IMUP_THREADS for the scan; the result is the same either way.
std::optional<PowSolution> solve_pow(const ChameleonPublicKey& pk, const PowChallenge& ch,
                                     std::uint64_t max_nonce = UINT64_MAX);

// Recompute-and-compare; exactly one chash evaluation. Malformed input
// yields false, never a throw.
bool verify_pow(const ChameleonPublicKey& pk, const PowChallenge& ch, const PowSolution& sol);

// Device-side form: only the nonce is stored, the hash is recomputed.
bool verify_pow_nonce(const ChameleonPublicKey& pk, const PowChallenge& ch, std::uint64_t nonce);

// Worker cap from IMUP_THREADS (>= 1; defaults to 1 when unset/invalid).
unsigned pow_worker_count();

}  // namespace imup
