#include "imup/device.hpp"

#include <fstream>

namespace imup {

namespace {

bool chain_matches(const DeviceState& state, const FirmwareImage& image) {
  return image.digest_sequence() == state.chain.digests;
}

bool all_blocks_valid(const ChameleonPublicKey& pk, const FirmwareImage& image) {
  for (const auto& b : image.blocks)
    if (!block_valid(pk, b, image.difficulty)) return false;
  return block_valid(pk, image.commitment_block, image.difficulty);
}

// Commitment equality over public values; out-of-range scalars are a
// mismatch, not an error.
bool commitment_equality(const ChameleonPublicKey& pk, const Bytes& m_pre, const Int& c_pre,
                         const Bytes& m_upd, const Int& proof) {
  if (c_pre < 0 || c_pre >= pk.q) return false;
  if (proof < 0 || proof >= pk.q) return false;
  return chash(pk, ByteView(m_pre), c_pre) == chash(pk, ByteView(m_upd), proof);
}

std::map<std::uint32_t, std::vector<std::uint32_t>> image_dependency_map(
    const FirmwareImage& image) {
  std::map<std::uint32_t, std::vector<std::uint32_t>> deps;
  for (const auto& b : image.blocks) {
    if (!b.module_id) continue;
    deps[*b.module_id] = parse_fmodule(ByteView(b.content)).manifest.dependencies;
  }
  return deps;
}

}  // namespace

DeviceState factory_init(const DeviceState& current, const VerificationChain& chain,
                         unsigned required_difficulty) {
  if (current.initialized) throw Error("device already initialized");
  DeviceState state;
  state.chain = chain;
  state.required_difficulty = required_difficulty;
  state.initialized = true;
  return state;
}

bool functional_verify(const ChameleonPublicKey& pk, const DeviceState& state,
                       const FirmwareImage& image) {
  if (!state.initialized) return false;
  if (image.kind != ImageKind::functional) return false;
  if (image.difficulty < state.required_difficulty) return false;
  if (!chain_matches(state, image)) return false;
  return all_blocks_valid(pk, image);
}

std::pair<bool, DeviceState> security_verify(const ChameleonPublicKey& pk,
                                             const DeviceState& state,
                                             const FirmwareImage& image) {
  if (!state.initialized) return {false, state};
  if (image.kind != ImageKind::security || !image.proof) return {false, state};
  if (image.difficulty < state.required_difficulty) return {false, state};
  // Recompute the message side rather than trusting the stored field.
  Bytes m_upd = aggregate_block_info(image.blocks);
  if (!commitment_equality(pk, state.chain.commitment_message(), state.chain.commitment, m_upd,
                           *image.proof))
    return {false, state};
  if (!all_blocks_valid(pk, image)) return {false, state};

  DeviceState rotated = state;
  rotated.chain = image.chain();
  return {true, rotated};
}

DeviceState install(const ChameleonPublicKey& pk, const DeviceState& state,
                    const FirmwareImage& image, const std::set<std::uint32_t>& selected) {
  if (!state.initialized) throw Error("device not initialized");
  if (!chain_matches(state, image) || !all_blocks_valid(pk, image))
    throw Error("image not verified against the stored chain");

  std::set<std::uint32_t> available = image.module_set();
  for (std::uint32_t id : selected)
    if (!available.count(id)) throw Error("selected module absent from image: " + std::to_string(id));

  auto deps = image_dependency_map(image);
  std::set<std::uint32_t> closure;
  std::vector<std::uint32_t> work(selected.begin(), selected.end());
  while (!work.empty()) {
    std::uint32_t id = work.back();
    work.pop_back();
    if (!closure.insert(id).second) continue;
    auto it = deps.find(id);
    if (it == deps.end()) throw Error("dependency closure unsatisfiable in image");
    for (std::uint32_t dep : it->second) work.push_back(dep);
  }

  DeviceState next = state;
  next.installed.insert(closure.begin(), closure.end());
  return next;
}

namespace {

constexpr std::string_view kDeviceMagic = "IMUPDEV1";

void put_lp_int(Bytes& out, const Int& v) {
  put_lp(out, ByteView(to_fixed_be(v, byte_width(v))));
}

}  // namespace

void save_device_state(const std::filesystem::path& path, const DeviceFile& dev) {
  if (!dev.state.initialized) throw Error("refusing to persist uninitialized device state");
  Bytes out;
  put_bytes(out, to_bytes(kDeviceMagic));
  put_lp_int(out, dev.pk.p);
  put_lp_int(out, dev.pk.q);
  put_lp_int(out, dev.pk.g);
  put_lp_int(out, dev.pk.h);
  put_u8(out, static_cast<std::uint8_t>(dev.state.required_difficulty));
  put_u16be(out, static_cast<std::uint16_t>(dev.state.chain.digests.size()));
  for (const auto& d : dev.state.chain.digests) put_bytes(out, ByteView(d.encoded()));
  put_bytes(out, ByteView(to_fixed_be(dev.state.chain.commitment, dev.pk.scalar_width())));
  put_lp_string(out, dev.state.chain.checkpoint_id);
  put_u32be(out, static_cast<std::uint32_t>(dev.state.installed.size()));
  for (std::uint32_t id : dev.state.installed) put_u32be(out, id);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open device state file for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("short write to device state file: " + path.string());
}

DeviceFile load_device_state(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open device state file: " + path.string());
  Bytes data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ByteReader r{ByteView(data)};
  r.expect_magic(kDeviceMagic);
  DeviceFile dev;
  dev.pk.p = from_be(ByteView(r.lp_bytes()));
  dev.pk.q = from_be(ByteView(r.lp_bytes()));
  dev.pk.g = from_be(ByteView(r.lp_bytes()));
  dev.pk.h = from_be(ByteView(r.lp_bytes()));
  dev.state.required_difficulty = r.u8();
  std::uint16_t count = r.u16be();
  for (std::uint16_t i = 0; i < count; ++i)
    dev.state.chain.digests.push_back(decode_digest(ByteView(r.take(dev.pk.digest_width()))));
  dev.state.chain.commitment = from_be(ByteView(r.take(dev.pk.scalar_width())));
  dev.state.chain.checkpoint_id = r.lp_string();
  std::uint32_t installed = r.u32be();
  for (std::uint32_t i = 0; i < installed; ++i) dev.state.installed.insert(r.u32be());
  if (!r.done()) throw Error("trailing bytes after device state");
  dev.state.initialized = true;
  return dev;
}

StreamVerifyResult stream_verify_image_file(const ChameleonPublicKey& pk,
                                            const DeviceState& state,
                                            const std::filesystem::path& path,
                                            const std::string& branch) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open image file: " + path.string());

  auto read_exact = [&](std::size_t n) {
    Bytes buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n) throw Error("truncated image file");
    return buf;
  };
  auto read_u8 = [&] { return read_exact(1)[0]; };
  auto read_u16 = [&] {
    Bytes b = read_exact(2);
    return static_cast<std::uint16_t>(b[0] << 8 | b[1]);
  };
  auto read_u32 = [&] {
    Bytes b = read_exact(4);
    std::uint32_t v = 0;
    for (std::uint8_t x : b) v = v << 8 | x;
    return v;
  };
  auto read_u64 = [&] {
    Bytes b = read_exact(8);
    std::uint64_t v = 0;
    for (std::uint8_t x : b) v = v << 8 | x;
    return v;
  };
  auto read_lp = [&] { return read_exact(read_u32()); };

  StreamVerifyResult result;
  Bytes magic = read_exact(8);
  if (Bytes(to_bytes("IMUPIMG1")) != magic) throw Error("bad image magic");
  std::uint8_t kind_byte = read_u8();
  if (kind_byte > 1) throw Error("bad image kind byte");
  result.kind = static_cast<ImageKind>(kind_byte);
  unsigned difficulty = read_u8();
  std::string version_id;
  {
    Bytes v = read_lp();
    version_id.assign(v.begin(), v.end());
  }
  std::uint16_t block_count = read_u16();

  bool want_security = result.kind == ImageKind::security;
  if (branch == "functional" && want_security) return result;
  if (branch == "security" && !want_security) return result;
  if (!state.initialized) return result;
  if (difficulty < state.required_difficulty) return result;
  if (static_cast<std::size_t>(block_count) + 1 != state.chain.digests.size() && !want_security)
    return result;

  // Blocks are checked as they stream by; one block in memory at a time.
  bool blocks_ok = true;
  Bytes block_info;
  std::vector<ChameleonDigest> digests;
  for (std::uint32_t i = 0; i <= block_count; ++i) {
    FilledBlock b;
    std::uint32_t id = read_u32();
    if (id != 0xffffffffu) b.module_id = id;
    b.content = read_lp();
    b.r = from_be(ByteView(read_exact(pk.scalar_width())));
    b.solution_nonce = read_u64();
    b.digest = decode_digest(ByteView(read_exact(pk.digest_width())));
    if (blocks_ok && !block_valid(pk, b, difficulty)) blocks_ok = false;
    if (!want_security && blocks_ok && state.chain.digests[i] != b.digest) blocks_ok = false;
    if (i < block_count) put_bytes(block_info, ByteView(b.digest.encoded()));
    digests.push_back(b.digest);
  }
  Bytes stored_info = read_lp();
  Int commitment = from_be(ByteView(read_exact(pk.scalar_width())));
  std::optional<Int> proof;
  if (read_u8() != 0) proof = from_be(ByteView(read_exact(pk.scalar_width())));

  if (!blocks_ok) return result;
  if (stored_info != block_info) return result;

  if (want_security) {
    if (!proof) return result;
    if (!commitment_equality(pk, state.chain.commitment_message(), state.chain.commitment,
                             block_info, *proof))
      return result;
    DeviceState rotated = state;
    rotated.chain = VerificationChain{std::move(digests), commitment, version_id};
    result.rotated = std::move(rotated);
    result.accepted = true;
    return result;
  }

  result.accepted = true;
  return result;
}

}  // namespace imup
