#pragma once

#include <optional>

#include "imup/package.hpp"

namespace imup {

enum class ImageKind : std::uint8_t { functional = 0, security = 1 };

// One slot of an image: either a functional module swapped in over a pool
// template via a trapdoor collision, or the template's pristine padding.
// The digest is the template's and never changes.
struct FilledBlock {
  Bytes content;
  Int r;
  std::uint64_t solution_nonce = 0;
  ChameleonDigest digest;
  std::optional<std::uint32_t> module_id;  // nullopt = filler
  bool operator==(const FilledBlock&) const = default;
};

struct VerificationChain {
  std::vector<ChameleonDigest> digests;  // L block digests + commitment-block digest
  Int commitment;
  std::string checkpoint_id;

  // Message side of the commitment equality: the first L digests
  // concatenated, i.e. exactly the image's block_info.
  Bytes commitment_message() const;
  bool operator==(const VerificationChain&) const = default;
};

struct FirmwareImage {
  std::string version_id;
  ImageKind kind = ImageKind::functional;
  unsigned difficulty = 0;
  std::vector<FilledBlock> blocks;  // exactly L
  FilledBlock commitment_block;
  Bytes block_info;
  Int commitment;
  std::optional<Int> proof;  // security images only

  std::set<std::uint32_t> module_set() const;
  std::vector<ChameleonDigest> digest_sequence() const;  // blocks then commitment block
  VerificationChain chain() const;
  bool operator==(const FirmwareImage&) const = default;
};

// Server-side record of a checkpoint: the image, its chain, and the pool
// templates behind each slot. Variants are derived from the templates so
// every digest (hence H) stays identical within the window.
struct Checkpoint {
  FirmwareImage image;
  VerificationChain chain;
  std::vector<CryptoModule> sources;  // L+1, slot-aligned, last = commitment block
};

Bytes aggregate_block_info(const std::vector<FilledBlock>& blocks);

// Message side of a variant's commitment: slot ids plus content hashes.
// Every variant satisfies chash(this, C_variant) == chash(checkpoint
// block_info, checkpoint C), publicly checkable.
Bytes variant_commitment_message(const FirmwareImage& image);

// Full per-block validity: content/id consistency, chameleon digest match,
// PoW nonce at the stated difficulty.
bool block_valid(const ChameleonPublicKey& pk, const FilledBlock& block, unsigned difficulty);

// Assembles the first trusted image from L modules plus one commitment
// block; the returned chain is the device's factory trust root.
Checkpoint init_firmware(const ChameleonKeyPair& kp, CryptoPool& pool,
                         const std::vector<FunctionalModule>& fmodules, Drbg& rng);

// Security checkpoint: fresh blocks, fresh commitment, and a proof P with
//   chash(prev.block_info, prev.C) == chash(new.block_info, P)
// computable only with the trapdoor.
Checkpoint security_update(const ChameleonKeyPair& kp, const Checkpoint& prev, CryptoPool& pool,
                           const std::vector<FunctionalModule>& fmodules, Drbg& rng);

// Customized variant sharing the checkpoint's H element-wise. Requested
// ids are closed over dependencies; leftover slots keep pristine padding.
// Each distinct module set yields a distinct commitment (itself a collision
// witness against the checkpoint's commitment).
FirmwareImage iterate_version(const ChameleonKeyPair& kp, const Checkpoint& checkpoint,
                              const std::set<std::uint32_t>& requested,
                              const ModuleCatalog& catalog);

Bytes serialize_image(const ChameleonPublicKey& pk, const FirmwareImage& image);
FirmwareImage parse_image(const ChameleonPublicKey& pk, ByteView data);
void save_image(const std::filesystem::path& path, const ChameleonPublicKey& pk,
                const FirmwareImage& image);
FirmwareImage load_image(const std::filesystem::path& path, const ChameleonPublicKey& pk);

}  // namespace imup
