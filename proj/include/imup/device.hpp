#pragma once

#include "imup/pipeline.hpp"

namespace imup {

// Device-side state and the two verification branches. State transitions
// are verify-then-swap: callers get a fresh DeviceState on success and the
// old value stays untouched on failure.

struct DeviceState {
  VerificationChain chain;
  std::set<std::uint32_t> installed;
  unsigned required_difficulty = 0;  // floor for accepted images
  bool initialized = false;
  bool operator==(const DeviceState&) const = default;
};

// Factory trust: adopts the chain without verification. Throws if the
// device was already initialized.
DeviceState factory_init(const DeviceState& current, const VerificationChain& chain,
                         unsigned required_difficulty);

// Functional branch: exact ordered H match plus per-block digest and PoW
// checks. Pure; only functional-kind images are eligible.
bool functional_verify(const ChameleonPublicKey& pk, const DeviceState& state,
                       const FirmwareImage& image);

// Security branch: commitment equality
//   chash(stored block_info, stored C) == chash(image block_info, P)
// plus per-block checks; on success the returned state carries the image's
// chain. Only security-kind images with a proof are eligible.
std::pair<bool, DeviceState> security_verify(const ChameleonPublicKey& pk,
                                             const DeviceState& state,
                                             const FirmwareImage& image);

// Installs selected modules plus their in-image dependency closure. The
// image must match the stored chain; selections outside the image or with
// unsatisfiable closures throw.
DeviceState install(const ChameleonPublicKey& pk, const DeviceState& state,
                    const FirmwareImage& image, const std::set<std::uint32_t>& selected);

struct DeviceFile {
  ChameleonPublicKey pk;
  DeviceState state;
};

void save_device_state(const std::filesystem::path& path, const DeviceFile& dev);
DeviceFile load_device_state(const std::filesystem::path& path);

// File-based verification for the CLI: blocks are read and checked one at a
// time rather than materializing the image. `branch` empty means "follow
// the image's kind flag"; naming a branch rejects images of the other kind.
struct StreamVerifyResult {
  bool accepted = false;
  ImageKind kind = ImageKind::functional;
  std::optional<DeviceState> rotated;  // set on security acceptance
};
StreamVerifyResult stream_verify_image_file(const ChameleonPublicKey& pk,
                                            const DeviceState& state,
                                            const std::filesystem::path& path,
                                            const std::string& branch = "");

}  // namespace imup
