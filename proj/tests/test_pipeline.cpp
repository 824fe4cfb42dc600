#include <doctest.h>

#include "test_support.hpp"

using namespace imup;
using namespace imup::test;

TEST_CASE("init preserves the pool digests under content swap") {
  PipelineFixture fx(kp64(), 4, 2);
  const auto& image = fx.checkpoint.image;
  REQUIRE(image.blocks.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(image.blocks[i].digest == fx.checkpoint.sources[i].digest);
    // Oracle: recompute the chameleon value of the swapped-in content.
    CHECK(oracle_chash_value(fx.kp.pk, ByteView(tagged_message(ByteView(image.blocks[i].content))),
                             image.blocks[i].r) == image.blocks[i].digest.value);
  }
  CHECK(image.commitment_block.digest == fx.checkpoint.sources[2].digest);
  CHECK(image.module_set() == std::set<std::uint32_t>{1, 2});
}

TEST_CASE("rebuilding with permuted modules yields different block_info and commitment") {
  const auto& kp = kp64();
  ModuleCatalog catalog = small_catalog(2);
  CryptoPool pool(gen_crypto_modules(kp.pk, 6, 0, ByteView(to_bytes("perm"))));
  Drbg rng(std::uint64_t{41});
  Checkpoint ab = init_firmware(kp, pool, modules_from(catalog, {1, 2}), rng);
  Checkpoint ba = init_firmware(kp, pool, modules_from(catalog, {2, 1}), rng);
  CHECK(ab.image.block_info != ba.image.block_info);
  CHECK(ab.image.commitment != ba.image.commitment);
  // Oracle confirms each build's digests really cover its own contents.
  for (const Checkpoint* ckpt : {&ab, &ba})
    for (const auto& b : ckpt->image.blocks)
      CHECK(oracle_chash_value(kp.pk, ByteView(tagged_message(ByteView(b.content))), b.r) ==
            b.digest.value);
}

TEST_CASE("init output verifies on a factory-initialized device") {
  PipelineFixture fx(kp64(), 8, 7);
  DeviceState device = factory_init(DeviceState{}, fx.checkpoint.chain, 0);
  CHECK(functional_verify(fx.kp.pk, device, fx.checkpoint.image));
}

TEST_CASE("init errors: exhausted pool and duplicate ids") {
  const auto& kp = kp64();
  ModuleCatalog catalog = small_catalog(3);
  CryptoPool pool(gen_crypto_modules(kp.pk, 3, 0, ByteView(to_bytes("tiny"))));
  Drbg rng(std::uint64_t{42});
  CHECK_THROWS_AS(init_firmware(kp, pool, modules_from(catalog, {1, 2, 3}), rng), Error);

  CryptoPool pool2(gen_crypto_modules(kp.pk, 4, 0, ByteView(to_bytes("dups"))));
  CHECK_THROWS_AS(init_firmware(kp, pool2, modules_from(catalog, {1, 1}), rng), Error);
}

TEST_CASE("aggregate_block_info is ordered concatenation") {
  PipelineFixture fx(kp64(), 8, 7);
  auto blocks = fx.checkpoint.image.blocks;
  CHECK(aggregate_block_info({blocks[0]}) == blocks[0].digest.encoded());
  CHECK(aggregate_block_info(blocks).size() == 7 * fx.kp.pk.digest_width());
  auto swapped = blocks;
  std::swap(swapped[0], swapped[1]);
  CHECK(aggregate_block_info(swapped) != aggregate_block_info(blocks));
}

TEST_CASE("security update binds to its predecessor through the proof") {
  PipelineFixture fx(kp64(), 8, 7);
  Checkpoint next = security_update(fx.kp, fx.checkpoint, fx.pool,
                                    modules_from(fx.catalog, {1, 2, 3, 4, 5, 6, 7}), fx.rng);
  REQUIRE(next.image.proof.has_value());
  CHECK(next.image.kind == ImageKind::security);
  CHECK(next.image.commitment != fx.checkpoint.image.commitment);
  CHECK(next.image.proof != fx.checkpoint.image.commitment);
  // The equality, checked through the oracle route.
  CHECK(oracle_chash_value(fx.kp.pk, ByteView(fx.checkpoint.image.block_info),
                           fx.checkpoint.image.commitment) ==
        oracle_chash_value(fx.kp.pk, ByteView(next.image.block_info), *next.image.proof));
}

TEST_CASE("identical module list still produces a fresh commitment and valid proof") {
  PipelineFixture fx(kp64(), 8, 7);
  std::vector<std::uint32_t> same = {1, 2, 3, 4, 5, 6, 7};
  Checkpoint next =
      security_update(fx.kp, fx.checkpoint, fx.pool, modules_from(fx.catalog, same), fx.rng);
  CHECK(next.image.block_info != fx.checkpoint.image.block_info);  // fresh block randomness
  CHECK(*next.image.proof != fx.checkpoint.image.commitment);
  CHECK(chash(fx.kp.pk, ByteView(next.image.block_info), *next.image.proof) ==
        chash(fx.kp.pk, ByteView(fx.checkpoint.image.block_info),
              fx.checkpoint.image.commitment));
}

TEST_CASE("two security updates from one baseline carry distinct proofs") {
  PipelineFixture fx(kp64(), 8, 7);
  std::vector<std::uint32_t> ids = {1, 2, 3, 4, 5, 6, 7};
  Drbg rng_a(std::uint64_t{100});
  Drbg rng_b(std::uint64_t{200});
  Checkpoint a = security_update(fx.kp, fx.checkpoint, fx.pool, modules_from(fx.catalog, ids),
                                 rng_a);
  Checkpoint b = security_update(fx.kp, fx.checkpoint, fx.pool, modules_from(fx.catalog, ids),
                                 rng_b);
  CHECK(*a.image.proof != *b.image.proof);
}

TEST_CASE("security update rejects a mismatched previous chain") {
  PipelineFixture fx(kp64(), 8, 7);
  Checkpoint broken = fx.checkpoint;
  broken.chain.commitment += 1;
  CHECK_THROWS_AS(security_update(fx.kp, broken, fx.pool,
                                  modules_from(fx.catalog, {1, 2, 3, 4, 5, 6, 7}), fx.rng),
                  Error);
}

TEST_CASE("variants share the checkpoint H and pass device verification") {
  PipelineFixture fx(kp64(), 8, 7);
  DeviceState device = factory_init(DeviceState{}, fx.checkpoint.chain, 0);

  FirmwareImage empty = iterate_version(fx.kp, fx.checkpoint, {}, fx.catalog);
  CHECK(empty.module_set().empty());
  CHECK(empty.digest_sequence() == fx.checkpoint.chain.digests);
  for (const auto& b : empty.blocks) CHECK_FALSE(b.module_id.has_value());
  CHECK(functional_verify(fx.kp.pk, device, empty));

  FirmwareImage ac = iterate_version(fx.kp, fx.checkpoint, {1, 3}, fx.catalog);
  FirmwareImage acd = iterate_version(fx.kp, fx.checkpoint, {1, 3, 4}, fx.catalog);
  CHECK(ac.digest_sequence() == acd.digest_sequence());
  CHECK(functional_verify(fx.kp.pk, device, ac));
  CHECK(functional_verify(fx.kp.pk, device, acd));
}

TEST_CASE("variant requests pull in dependency closures") {
  const auto& kp = kp64();
  ModuleCatalog catalog = small_catalog(8, {{5, {2}}});
  CryptoPool pool(gen_crypto_modules(kp.pk, 9, 0, ByteView(to_bytes("deps"))));
  Drbg rng(std::uint64_t{43});
  Checkpoint ckpt = init_firmware(kp, pool, modules_from(catalog, {1, 2, 3, 4, 5, 6, 7}), rng);
  FirmwareImage variant = iterate_version(kp, ckpt, {5}, catalog);
  CHECK(variant.module_set() == std::set<std::uint32_t>{2, 5});
}

TEST_CASE("variant errors: oversize closure and unknown ids") {
  PipelineFixture fx(kp64(), 10, 3);
  CHECK_THROWS_AS(iterate_version(fx.kp, fx.checkpoint, {1, 2, 3, 4}, fx.catalog), Error);
  CHECK_THROWS_AS(iterate_version(fx.kp, fx.checkpoint, {77}, fx.catalog), Error);
}

TEST_CASE("distinct module sets yield distinct commitments that witness the checkpoint") {
  PipelineFixture fx(kp64(), 8, 7);
  std::set<Int> commitments;
  std::vector<std::set<std::uint32_t>> requests = {{}, {1}, {2}, {1, 2}, {3, 5}, {1, 2, 3}};
  Int anchor = chash(fx.kp.pk, ByteView(fx.checkpoint.image.block_info),
                     fx.checkpoint.image.commitment)
                   .value;
  for (const auto& request : requests) {
    FirmwareImage variant = iterate_version(fx.kp, fx.checkpoint, request, fx.catalog);
    CHECK(commitments.insert(variant.commitment).second);
    CHECK(chash(fx.kp.pk, ByteView(variant_commitment_message(variant)), variant.commitment)
              .value == anchor);
  }
}

TEST_CASE("image serialization round-trips") {
  PipelineFixture fx(kp64(), 8, 7, 1);
  Drbg rng(std::uint64_t{44});
  auto dir = fresh_dir("img");

  Checkpoint sec = security_update(fx.kp, fx.checkpoint, fx.pool,
                                   modules_from(fx.catalog, {1, 2, 3, 4, 5, 6, 7}), rng);
  FirmwareImage variant = iterate_version(fx.kp, fx.checkpoint, {2, 4}, fx.catalog);

  for (const FirmwareImage* image : {&fx.checkpoint.image, &sec.image, &variant}) {
    Bytes wire = serialize_image(fx.kp.pk, *image);
    FirmwareImage parsed = parse_image(fx.kp.pk, ByteView(wire));
    CHECK(parsed == *image);
    CHECK(serialize_image(fx.kp.pk, parsed) == wire);
    save_image(dir / (image->version_id + ".img"), fx.kp.pk, *image);
    CHECK(load_image(dir / (image->version_id + ".img"), fx.kp.pk) == *image);
  }
}

TEST_CASE("parse rejects inconsistent block_info") {
  PipelineFixture fx(kp64(), 4, 2);
  Bytes wire = serialize_image(fx.kp.pk, fx.checkpoint.image);
  // block_info sits near the tail; flip a byte inside it.
  std::size_t tail = wire.size() - fx.kp.pk.scalar_width() - 1 - 3;
  wire[tail] ^= 0xff;
  CHECK_THROWS_AS(parse_image(fx.kp.pk, ByteView(wire)), Error);
}
