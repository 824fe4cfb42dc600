#include "imup/pipeline.hpp"

#include <algorithm>
#include <fstream>

namespace imup {

namespace {

constexpr std::string_view kImageMagic = "IMUPIMG1";
constexpr std::uint32_t kFillerId = 0xffffffffu;

std::string short_hash_hex(ByteView data) {
  return to_hex(ByteView(sha256(data).data(), 6));
}

FilledBlock module_block(const ChameleonKeyPair& kp, const CryptoModule& source,
                         const FunctionalModule& fm) {
  FilledBlock b;
  b.content = serialize_fmodule(fm);
  b.r = find_collision(kp, ByteView(tagged_message(ByteView(source.pstr))), source.pparam,
                       ByteView(tagged_message(ByteView(b.content))));
  b.solution_nonce = source.solution_nonce;
  b.digest = source.digest;
  b.module_id = fm.module_id;
  return b;
}

FilledBlock filler_block(const CryptoModule& source) {
  FilledBlock b;
  b.content = source.pstr;
  b.r = source.pparam;
  b.solution_nonce = source.solution_nonce;
  b.digest = source.digest;
  return b;
}

void require_distinct_ids(const std::vector<FunctionalModule>& fmodules) {
  std::set<std::uint32_t> seen;
  for (const auto& fm : fmodules)
    if (!seen.insert(fm.module_id).second)
      throw Error("duplicate module id in build: " + std::to_string(fm.module_id));
}

FirmwareImage assemble(const ChameleonKeyPair& kp, const std::vector<CryptoModule>& sources,
                       const std::vector<FunctionalModule>& fmodules, const Int& commitment,
                       ImageKind kind, unsigned difficulty) {
  FirmwareImage image;
  image.kind = kind;
  image.difficulty = difficulty;
  for (std::size_t i = 0; i < fmodules.size(); ++i)
    image.blocks.push_back(module_block(kp, sources[i], fmodules[i]));
  image.commitment_block = filler_block(sources.back());
  image.block_info = aggregate_block_info(image.blocks);
  image.commitment = commitment;
  return image;
}

}  // namespace

Bytes VerificationChain::commitment_message() const {
  Bytes out;
  if (digests.empty()) return out;
  for (std::size_t i = 0; i + 1 < digests.size(); ++i)
    put_bytes(out, ByteView(digests[i].encoded()));
  return out;
}

std::set<std::uint32_t> FirmwareImage::module_set() const {
  std::set<std::uint32_t> out;
  for (const auto& b : blocks)
    if (b.module_id) out.insert(*b.module_id);
  return out;
}

std::vector<ChameleonDigest> FirmwareImage::digest_sequence() const {
  std::vector<ChameleonDigest> out;
  out.reserve(blocks.size() + 1);
  for (const auto& b : blocks) out.push_back(b.digest);
  out.push_back(commitment_block.digest);
  return out;
}

VerificationChain FirmwareImage::chain() const {
  return VerificationChain{digest_sequence(), commitment, version_id};
}

Bytes aggregate_block_info(const std::vector<FilledBlock>& blocks) {
  Bytes out;
  for (const auto& b : blocks) put_bytes(out, ByteView(b.digest.encoded()));
  return out;
}

Bytes variant_commitment_message(const FirmwareImage& image) {
  Bytes out;
  for (const auto& b : image.blocks) {
    put_u32be(out, b.module_id ? *b.module_id : kFillerId);
    auto d = sha256(ByteView(b.content));
    put_bytes(out, ByteView(d.data(), d.size()));
  }
  return out;
}

bool block_valid(const ChameleonPublicKey& pk, const FilledBlock& block, unsigned difficulty) {
  if (block.module_id) {
    try {
      if (parse_fmodule(ByteView(block.content)).module_id != *block.module_id) return false;
    } catch (const Error&) {
      return false;
    }
  }
  if (!verify_pair(pk, ByteView(tagged_message(ByteView(block.content))), block.r, block.digest))
    return false;
  return verify_pow_nonce(pk, PowChallenge{block.digest.encoded(), difficulty},
                          block.solution_nonce);
}

Checkpoint init_firmware(const ChameleonKeyPair& kp, CryptoPool& pool,
                         const std::vector<FunctionalModule>& fmodules, Drbg& rng) {
  if (fmodules.empty()) throw Error("init requires at least one module");
  require_distinct_ids(fmodules);

  std::vector<CryptoModule> sources = pool.claim(fmodules.size() + 1);
  unsigned difficulty = sources.front().difficulty;
  Int commitment = uniform_below(rng, kp.pk.q);

  Checkpoint ckpt;
  ckpt.image = assemble(kp, sources, fmodules, commitment, ImageKind::functional, difficulty);
  Bytes idsrc = ckpt.image.block_info;
  put_bytes(idsrc, ByteView(to_fixed_be(commitment, kp.pk.scalar_width())));
  ckpt.image.version_id = "ckpt-" + short_hash_hex(ByteView(idsrc));
  ckpt.chain = ckpt.image.chain();
  ckpt.sources = std::move(sources);
  return ckpt;
}

Checkpoint security_update(const ChameleonKeyPair& kp, const Checkpoint& prev, CryptoPool& pool,
                           const std::vector<FunctionalModule>& fmodules, Drbg& rng) {
  if (fmodules.empty()) throw Error("security update requires at least one module");
  require_distinct_ids(fmodules);
  if (prev.chain.digests != prev.image.digest_sequence() ||
      prev.chain.commitment != prev.image.commitment)
    throw Error("previous chain does not match previous image");

  std::vector<CryptoModule> sources = pool.claim(fmodules.size() + 1);
  unsigned difficulty = sources.front().difficulty;
  Int commitment = uniform_below(rng, kp.pk.q);

  Checkpoint ckpt;
  ckpt.image = assemble(kp, sources, fmodules, commitment, ImageKind::security, difficulty);
  Bytes idsrc = ckpt.image.block_info;
  put_bytes(idsrc, ByteView(to_fixed_be(commitment, kp.pk.scalar_width())));
  ckpt.image.version_id = "ckpt-" + short_hash_hex(ByteView(idsrc));
  ckpt.image.proof = find_collision(kp, ByteView(prev.image.block_info), prev.image.commitment,
                                    ByteView(ckpt.image.block_info));
  ckpt.chain = ckpt.image.chain();
  ckpt.sources = std::move(sources);
  return ckpt;
}

FirmwareImage iterate_version(const ChameleonKeyPair& kp, const Checkpoint& checkpoint,
                              const std::set<std::uint32_t>& requested,
                              const ModuleCatalog& catalog) {
  const std::size_t slots = checkpoint.image.blocks.size();
  std::set<std::uint32_t> closed = catalog.closure(requested);
  if (closed.size() > slots)
    throw Error("request needs " + std::to_string(closed.size()) + " slots, image has " +
                std::to_string(slots));

  FirmwareImage image;
  image.kind = ImageKind::functional;
  image.difficulty = checkpoint.image.difficulty;

  std::vector<std::uint32_t> ids(closed.begin(), closed.end());
  for (std::size_t i = 0; i < slots; ++i) {
    if (i < ids.size())
      image.blocks.push_back(module_block(kp, checkpoint.sources[i], catalog.get(ids[i])));
    else
      image.blocks.push_back(filler_block(checkpoint.sources[i]));
  }
  image.commitment_block = filler_block(checkpoint.sources[slots]);
  image.block_info = aggregate_block_info(image.blocks);

  image.commitment = find_collision(kp, ByteView(checkpoint.image.block_info),
                                    checkpoint.image.commitment,
                                    ByteView(variant_commitment_message(image)));

  Bytes idsrc;
  put_bytes(idsrc, to_bytes(checkpoint.chain.checkpoint_id));
  for (std::uint32_t id : ids) put_u32be(idsrc, id);
  image.version_id = checkpoint.chain.checkpoint_id + "-v" + short_hash_hex(ByteView(idsrc));
  return image;
}

Bytes serialize_image(const ChameleonPublicKey& pk, const FirmwareImage& image) {
  Bytes out;
  put_bytes(out, to_bytes(kImageMagic));
  put_u8(out, static_cast<std::uint8_t>(image.kind));
  put_u8(out, static_cast<std::uint8_t>(image.difficulty));
  put_lp_string(out, image.version_id);
  put_u16be(out, static_cast<std::uint16_t>(image.blocks.size()));
  auto put_block = [&](const FilledBlock& b) {
    put_u32be(out, b.module_id ? *b.module_id : kFillerId);
    put_lp(out, ByteView(b.content));
    put_bytes(out, ByteView(to_fixed_be(b.r, pk.scalar_width())));
    put_u64be(out, b.solution_nonce);
    put_bytes(out, ByteView(b.digest.encoded()));
  };
  for (const auto& b : image.blocks) put_block(b);
  put_block(image.commitment_block);
  put_lp(out, ByteView(image.block_info));
  put_bytes(out, ByteView(to_fixed_be(image.commitment, pk.scalar_width())));
  put_u8(out, image.proof ? 1 : 0);
  if (image.proof) put_bytes(out, ByteView(to_fixed_be(*image.proof, pk.scalar_width())));
  return out;
}

FirmwareImage parse_image(const ChameleonPublicKey& pk, ByteView data) {
  ByteReader r{data};
  r.expect_magic(kImageMagic);
  FirmwareImage image;
  std::uint8_t kind = r.u8();
  if (kind > 1) throw Error("bad image kind byte");
  image.kind = static_cast<ImageKind>(kind);
  image.difficulty = r.u8();
  image.version_id = r.lp_string();
  std::uint16_t count = r.u16be();
  auto read_block = [&] {
    FilledBlock b;
    std::uint32_t id = r.u32be();
    if (id != kFillerId) b.module_id = id;
    b.content = r.lp_bytes();
    b.r = from_be(ByteView(r.take(pk.scalar_width())));
    b.solution_nonce = r.u64be();
    b.digest = decode_digest(ByteView(r.take(pk.digest_width())));
    return b;
  };
  for (std::uint16_t i = 0; i < count; ++i) image.blocks.push_back(read_block());
  image.commitment_block = read_block();
  image.block_info = r.lp_bytes();
  image.commitment = from_be(ByteView(r.take(pk.scalar_width())));
  if (r.u8() != 0) image.proof = from_be(ByteView(r.take(pk.scalar_width())));
  if (!r.done()) throw Error("trailing bytes after image record");
  if (image.block_info != aggregate_block_info(image.blocks))
    throw Error("image block_info does not match its blocks");
  return image;
}

void save_image(const std::filesystem::path& path, const ChameleonPublicKey& pk,
                const FirmwareImage& image) {
  Bytes data = serialize_image(pk, image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open image file for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!f) throw Error("short write to image file: " + path.string());
}

FirmwareImage load_image(const std::filesystem::path& path, const ChameleonPublicKey& pk) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open image file: " + path.string());
  Bytes data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_image(pk, ByteView(data));
}

}  // namespace imup
