#include "imup/pow.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace imup {

namespace {

constexpr std::uint64_t kNoHit = UINT64_MAX;

Bytes message_with_nonce(const Bytes& m, std::uint64_t nonce) {
  Bytes buf = m;
  put_u64be(buf, nonce);
  return buf;
}

// One trial: digest encoding of chash(m || nonce, r0=1). h^1 folded into a
// single multiply; g^H(m||nonce) dominates.
Bytes trial_encoding(const ChameleonPublicKey& pk, const Bytes& m, std::uint64_t nonce) {
  Int e = message_exponent(pk, ByteView(message_with_nonce(m, nonce)));
  Int value = powm(pk.g, e, pk.p) * (pk.h % pk.p) % pk.p;
  return to_fixed_be(value, pk.digest_width());
}

std::uint64_t scan_range(const ChameleonPublicKey& pk, const PowChallenge& ch,
                         std::uint64_t begin, std::uint64_t end) {
  for (std::uint64_t nonce = begin; nonce < end; ++nonce) {
    if (leading_zero_nibbles(ByteView(trial_encoding(pk, ch.message, nonce))) >= ch.difficulty)
      return nonce;
  }
  return kNoHit;
}

}  // namespace

bool difficulty_in_range(const ChameleonPublicKey& pk, unsigned difficulty) {
  return difficulty <= 2 * pk.digest_width();
}

unsigned pow_worker_count() {
  const char* env = std::getenv("IMUP_THREADS");
  if (!env) return 1;
  long v = std::strtol(env, nullptr, 10);
  if (v < 1) return 1;
  if (v > 64) return 64;
  return static_cast<unsigned>(v);
}

std::optional<PowSolution> solve_pow(const ChameleonPublicKey& pk, const PowChallenge& ch,
                                     std::uint64_t max_nonce) {
  if (!difficulty_in_range(pk, ch.difficulty))
    throw Error("pow difficulty out of range for this group");

  unsigned workers = pow_worker_count();
  std::uint64_t found = kNoHit;

  if (workers <= 1) {
    found = scan_range(pk, ch, 0, max_nonce);
  } else {
    constexpr std::uint64_t kChunk = 1024;
    std::atomic<std::uint64_t> next_chunk{0};
    std::atomic<std::uint64_t> best{kNoHit};
    std::uint64_t chunk_count = max_nonce / kChunk + (max_nonce % kChunk != 0);
    auto worker = [&] {
      for (;;) {
        std::uint64_t c = next_chunk.fetch_add(1);
        if (c >= chunk_count) return;
        std::uint64_t begin = c * kChunk;
        // Chunks are claimed in order, so everything below a recorded hit
        // has been or is being fully scanned; stop once we cannot improve.
        if (begin > best.load()) return;
        std::uint64_t end = std::min(max_nonce, begin + kChunk);
        std::uint64_t hit = scan_range(pk, ch, begin, end);
        if (hit != kNoHit) {
          std::uint64_t cur = best.load();
          while (hit < cur && !best.compare_exchange_weak(cur, hit)) {
          }
        }
      }
    };
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    found = best.load();
  }

  if (found == kNoHit) return std::nullopt;
  return PowSolution{found, trial_encoding(pk, ch.message, found)};
}

bool verify_pow(const ChameleonPublicKey& pk, const PowChallenge& ch, const PowSolution& sol) {
  if (!difficulty_in_range(pk, ch.difficulty)) return false;
  Bytes recomputed;
  try {
    recomputed = chash(pk, ByteView(message_with_nonce(ch.message, sol.nonce)), 1).encoded();
  } catch (const Error&) {
    return false;
  }
  return recomputed == sol.b_hash &&
         leading_zero_nibbles(ByteView(recomputed)) >= ch.difficulty;
}

bool verify_pow_nonce(const ChameleonPublicKey& pk, const PowChallenge& ch, std::uint64_t nonce) {
  if (!difficulty_in_range(pk, ch.difficulty)) return false;
  Bytes recomputed;
  try {
    recomputed = chash(pk, ByteView(message_with_nonce(ch.message, nonce)), 1).encoded();
  } catch (const Error&) {
    return false;
  }
  return leading_zero_nibbles(ByteView(recomputed)) >= ch.difficulty;
}

}  // namespace imup
