#pragma once

#include <array>
#include <cstdint>

#include "imup/bytes.hpp"

namespace imup {

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(ByteView data);

// Deterministic byte generator: counter-mode SHA-256 over a seed-derived key.
// Every randomized component (keygen, padding, workloads, commitments) draws
// from one of these so runs replay exactly under a fixed seed.
class Drbg {
 public:
  explicit Drbg(ByteView seed);
  explicit Drbg(std::string_view seed) : Drbg(ByteView(to_bytes(seed))) {}
  explicit Drbg(std::uint64_t seed);

  Bytes bytes(std::size_t n);
  std::uint8_t byte();
  std::uint64_t u64();
  // Uniform in [0, bound) by rejection; bound must be nonzero.
  std::uint64_t uniform(std::uint64_t bound);
  double unit_double();  // uniform in [0, 1)

  // Independent child stream; schedules stay deterministic even when
  // consumers run in parallel with per-index children.
  Drbg child(std::uint64_t index) const;
  Drbg child(std::string_view label) const;

 private:
  Drbg() = default;
  std::array<std::uint8_t, 32> key_{};
  std::uint64_t counter_ = 0;
  std::array<std::uint8_t, 32> block_{};
  std::size_t block_used_ = 32;
};

}  // namespace imup
