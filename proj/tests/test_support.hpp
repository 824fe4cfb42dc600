#pragma once

#include <filesystem>

#include "imup/bench.hpp"
#include "imup/device.hpp"

// Shared fixtures and independent oracles. Oracles use their own modular
// exponentiation so library results are checked against a second route.

namespace imup::test {

// Square-and-multiply written out by hand; deliberately not mpz_powm.
inline Int oracle_powmod(Int base, Int exp, const Int& mod) {
  Int result = 1;
  base %= mod;
  if (base < 0) base += mod;
  while (exp > 0) {
    if (mpz_odd_p(exp.get_mpz_t())) result = result * base % mod;
    base = base * base % mod;
    exp >>= 1;
  }
  return result;
}

inline Int oracle_chash_value(const ChameleonPublicKey& pk, ByteView m, const Int& r) {
  Int e = message_exponent(pk, m);
  return oracle_powmod(pk.g, e, pk.p) * oracle_powmod(pk.h, r, pk.p) % pk.p;
}

// Process-cached keypairs; generation is deterministic so caching is safe.
inline const ChameleonKeyPair& kp1024() {
  static ChameleonKeyPair kp = keygen(1024, ByteView(to_bytes("a")));
  return kp;
}
inline const ChameleonKeyPair& kp256() {
  static ChameleonKeyPair kp = keygen(256, ByteView(to_bytes("test-256")));
  return kp;
}
inline const ChameleonKeyPair& kp64() {
  static ChameleonKeyPair kp = keygen(64, ByteView(to_bytes("test-64")));
  return kp;
}

inline std::filesystem::path fresh_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("imup-test-" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Catalog of n single-step modules named m1..mn; deps as given.
inline ModuleCatalog small_catalog(std::uint32_t n,
                                   const std::map<std::uint32_t, std::vector<std::uint32_t>>&
                                       deps = {}) {
  ModuleCatalog catalog;
  Drbg rng(std::uint64_t{42});
  for (std::uint32_t i = 1; i <= n; ++i) {
    std::vector<std::uint32_t> d;
    auto it = deps.find(i);
    if (it != deps.end()) d = it->second;
    catalog.package("m" + std::to_string(i), ModuleKind::binary, rng.bytes(48), {"install"}, d);
  }
  return catalog;
}

inline std::vector<FunctionalModule> modules_from(const ModuleCatalog& catalog,
                                                  const std::vector<std::uint32_t>& ids) {
  std::vector<FunctionalModule> out;
  for (auto id : ids) out.push_back(catalog.get(id));
  return out;
}

// One random single-byte mutation over the tamper surface: block content,
// collision parameter, PoW nonce, digest, block ordering, and (for security
// images) the proof. Always changes the image.
inline FirmwareImage mutate_image(const FirmwareImage& image, const ChameleonPublicKey& pk,
                                  Drbg& rng, bool include_proof) {
  FirmwareImage out = image;
  unsigned field_count = include_proof && image.proof ? 6 : 5;
  unsigned field = static_cast<unsigned>(rng.uniform(field_count));
  auto flip_int = [&](Int v, std::size_t width) {
    Bytes enc = to_fixed_be(v, width);
    enc[rng.uniform(enc.size())] ^= static_cast<std::uint8_t>(1 + rng.uniform(255));
    return from_be(ByteView(enc));
  };
  auto pick_block = [&]() -> FilledBlock& {
    std::size_t idx = rng.uniform(out.blocks.size() + 1);
    return idx == out.blocks.size() ? out.commitment_block : out.blocks[idx];
  };
  switch (field) {
    case 0: {  // content byte
      FilledBlock& b = pick_block();
      b.content[rng.uniform(b.content.size())] ^= static_cast<std::uint8_t>(1 + rng.uniform(255));
      break;
    }
    case 1: {  // collision parameter
      FilledBlock& b = pick_block();
      b.r = flip_int(b.r, pk.scalar_width());
      break;
    }
    case 2: {  // PoW nonce
      FilledBlock& b = pick_block();
      b.solution_nonce ^= (1 + rng.uniform(255)) << (8 * rng.uniform(8));
      break;
    }
    case 3: {  // digest
      FilledBlock& b = pick_block();
      b.digest.value = flip_int(b.digest.value, b.digest.width);
      break;
    }
    case 4: {  // ordering: swap two adjacent blocks
      std::size_t i = rng.uniform(out.blocks.size() - 1);
      std::swap(out.blocks[i], out.blocks[i + 1]);
      break;
    }
    default: {  // proof
      out.proof = flip_int(*out.proof, pk.scalar_width());
      break;
    }
  }
  out.block_info = aggregate_block_info(out.blocks);
  return out;
}

struct PipelineFixture {
  ChameleonKeyPair kp;
  ModuleCatalog catalog;
  CryptoPool pool;
  Checkpoint checkpoint;
  Drbg rng;

  PipelineFixture(const ChameleonKeyPair& keypair, std::uint32_t catalog_size, std::size_t L,
                  unsigned difficulty = 0, std::uint64_t seed = 7,
                  std::size_t pool_checkpoints = 4)
      : kp(keypair),
        catalog(small_catalog(catalog_size)),
        pool(gen_crypto_modules(kp.pk, pool_checkpoints * (L + 1), difficulty,
                                ByteView(Drbg(seed).bytes(32)))),
        checkpoint(), rng(seed + 1) {
    std::vector<std::uint32_t> baseline;
    for (std::uint32_t i = 1; i <= L; ++i) baseline.push_back(i);
    checkpoint = init_firmware(kp, pool, modules_from(catalog, baseline), rng);
  }
};

}  // namespace imup::test
