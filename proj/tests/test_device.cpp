#include <doctest.h>

#include "test_support.hpp"

using namespace imup;
using namespace imup::test;

namespace {

struct DeviceFixture {
  PipelineFixture pipeline;
  DeviceState device;

  explicit DeviceFixture(unsigned difficulty = 0, std::size_t L = 7)
      : pipeline(kp64(), 8, L, difficulty),
        device(factory_init(DeviceState{}, pipeline.checkpoint.chain, difficulty)) {}
};

}  // namespace

TEST_CASE("factory init adopts the chain once") {
  PipelineFixture fx(kp64(), 8, 3);
  DeviceState fresh;
  DeviceState device = factory_init(fresh, fx.checkpoint.chain, 1);
  CHECK(device.initialized);
  CHECK(device.chain == fx.checkpoint.chain);
  CHECK(device.required_difficulty == 1);
  CHECK_THROWS_AS(factory_init(device, fx.checkpoint.chain, 1), Error);
}

TEST_CASE("device state survives a serialization round-trip") {
  DeviceFixture fx;
  DeviceState state = fx.device;
  state.installed = {1, 4};
  auto dir = fresh_dir("device");
  save_device_state(dir / "dev.bin", DeviceFile{fx.pipeline.kp.pk, state});
  DeviceFile loaded = load_device_state(dir / "dev.bin");
  CHECK(loaded.pk == fx.pipeline.kp.pk);
  CHECK(loaded.state == state);
  CHECK_THROWS_AS(save_device_state(dir / "bad.bin", DeviceFile{fx.pipeline.kp.pk, DeviceState{}}),
                  Error);
}

TEST_CASE("functional branch accepts sibling variants and is pure") {
  DeviceFixture fx;
  FirmwareImage variant = iterate_version(fx.pipeline.kp, fx.pipeline.checkpoint, {2, 5},
                                          fx.pipeline.catalog);
  DeviceState before = fx.device;
  CHECK(functional_verify(fx.pipeline.kp.pk, fx.device, variant));
  CHECK(fx.device == before);
}

TEST_CASE("functional branch rejects single-byte tampering") {
  DeviceFixture fx(4);
  FirmwareImage variant = iterate_version(fx.pipeline.kp, fx.pipeline.checkpoint, {1, 2, 3},
                                          fx.pipeline.catalog);
  REQUIRE(functional_verify(fx.pipeline.kp.pk, fx.device, variant));
  Drbg rng(std::uint64_t{51});
  for (int i = 0; i < 150; ++i) {
    FirmwareImage mutated = mutate_image(variant, fx.pipeline.kp.pk, rng, false);
    CHECK_FALSE(functional_verify(fx.pipeline.kp.pk, fx.device, mutated));
  }
}

TEST_CASE("L2 config tampering: edited script content is rejected") {
  // Config-level class: auxiliary script bytes change, image layout intact.
  const auto& kp = kp64();
  ModuleCatalog catalog;
  Drbg payload_rng(std::uint64_t{55});
  for (int i = 1; i <= 4; ++i)
    catalog.package("script-" + std::to_string(i), ModuleKind::script, payload_rng.bytes(64),
                    {"run"}, {});
  CryptoPool pool(gen_crypto_modules(kp.pk, 5, 0, ByteView(to_bytes("l2"))));
  Drbg rng(std::uint64_t{56});
  Checkpoint ckpt = init_firmware(kp, pool, modules_from(catalog, {1, 2, 3, 4}), rng);
  DeviceState device = factory_init(DeviceState{}, ckpt.chain, 0);
  FirmwareImage image = iterate_version(kp, ckpt, {1, 2}, catalog);
  REQUIRE(functional_verify(kp.pk, device, image));

  FunctionalModule script = parse_fmodule(ByteView(image.blocks[0].content));
  script.payload[3] ^= 0x41;  // injected command byte
  image.blocks[0].content = serialize_fmodule(script);
  CHECK_FALSE(functional_verify(kp.pk, device, image));
}

TEST_CASE("L3 module tampering: swapped-in binary module is rejected") {
  // Module-level class: a block's binary module is replaced wholesale
  // without the trapdoor; the digest no longer covers the content.
  DeviceFixture fx;
  FirmwareImage image = iterate_version(fx.pipeline.kp, fx.pipeline.checkpoint, {1, 2},
                                        fx.pipeline.catalog);
  REQUIRE(functional_verify(fx.pipeline.kp.pk, fx.device, image));
  FunctionalModule rogue = fx.pipeline.catalog.get(5);
  rogue.module_id = *image.blocks[0].module_id;  // forge the id label too
  image.blocks[0].content = serialize_fmodule(rogue);
  CHECK_FALSE(functional_verify(fx.pipeline.kp.pk, fx.device, image));
}

TEST_CASE("functional branch rejects reordered blocks") {
  DeviceFixture fx;
  FirmwareImage variant = iterate_version(fx.pipeline.kp, fx.pipeline.checkpoint, {1, 2, 3, 4},
                                          fx.pipeline.catalog);
  std::swap(variant.blocks[0], variant.blocks[1]);
  variant.block_info = aggregate_block_info(variant.blocks);
  CHECK_FALSE(functional_verify(fx.pipeline.kp.pk, fx.device, variant));
}

TEST_CASE("functional branch rejects a module id relabel") {
  DeviceFixture fx;
  FirmwareImage variant = iterate_version(fx.pipeline.kp, fx.pipeline.checkpoint, {1, 2},
                                          fx.pipeline.catalog);
  variant.blocks[0].module_id = 6;  // content still says otherwise
  CHECK_FALSE(functional_verify(fx.pipeline.kp.pk, fx.device, variant));
}

TEST_CASE("branches are mutually exclusive by kind flag") {
  DeviceFixture fx;
  FirmwareImage variant = iterate_version(fx.pipeline.kp, fx.pipeline.checkpoint, {1},
                                          fx.pipeline.catalog);
  CHECK(functional_verify(fx.pipeline.kp.pk, fx.device, variant));
  CHECK_FALSE(security_verify(fx.pipeline.kp.pk, fx.device, variant).first);

  Checkpoint next = security_update(fx.pipeline.kp, fx.pipeline.checkpoint, fx.pipeline.pool,
                                    modules_from(fx.pipeline.catalog, {1, 2, 3, 4, 5, 6, 7}),
                                    fx.pipeline.rng);
  CHECK_FALSE(functional_verify(fx.pipeline.kp.pk, fx.device, next.image));
  CHECK(security_verify(fx.pipeline.kp.pk, fx.device, next.image).first);
}

TEST_CASE("security branch rotates the chain exactly on acceptance") {
  DeviceFixture fx;
  Checkpoint next = security_update(fx.pipeline.kp, fx.pipeline.checkpoint, fx.pipeline.pool,
                                    modules_from(fx.pipeline.catalog, {1, 2, 3, 4, 5, 6, 7}),
                                    fx.pipeline.rng);
  auto [ok, rotated] = security_verify(fx.pipeline.kp.pk, fx.device, next.image);
  REQUIRE(ok);
  CHECK(rotated.chain == next.chain);
  CHECK(rotated.installed == fx.device.installed);

  // Variants of the new checkpoint verify only after rotation.
  FirmwareImage variant = iterate_version(fx.pipeline.kp, next, {3, 6}, fx.pipeline.catalog);
  CHECK_FALSE(functional_verify(fx.pipeline.kp.pk, fx.device, variant));
  CHECK(functional_verify(fx.pipeline.kp.pk, rotated, variant));
}

TEST_CASE("forged random proofs never pass and failure leaves state bit-identical") {
  DeviceFixture fx;
  Checkpoint next = security_update(fx.pipeline.kp, fx.pipeline.checkpoint, fx.pipeline.pool,
                                    modules_from(fx.pipeline.catalog, {1, 2, 3, 4, 5, 6, 7}),
                                    fx.pipeline.rng);
  FirmwareImage forged = next.image;
  Drbg rng(std::uint64_t{52});
  int accepted = 0;
  for (int i = 0; i < 10000; ++i) {
    forged.proof = uniform_below(rng, fx.pipeline.kp.pk.q);
    if (*forged.proof == *next.image.proof) continue;
    auto [ok, state_after] = security_verify(fx.pipeline.kp.pk, fx.device, forged);
    if (ok) ++accepted;
    CHECK(state_after == fx.device);
  }
  CHECK(accepted == 0);
}

TEST_CASE("replaying the previous checkpoint after rotation is rejected") {
  DeviceFixture fx;
  Checkpoint second = security_update(fx.pipeline.kp, fx.pipeline.checkpoint, fx.pipeline.pool,
                                      modules_from(fx.pipeline.catalog, {1, 2, 3, 4, 5, 6, 7}),
                                      fx.pipeline.rng);
  auto [ok1, dev1] = security_verify(fx.pipeline.kp.pk, fx.device, second.image);
  REQUIRE(ok1);
  Checkpoint third = security_update(fx.pipeline.kp, second, fx.pipeline.pool,
                                     modules_from(fx.pipeline.catalog, {1, 2, 3, 4, 5, 6, 7}),
                                     fx.pipeline.rng);
  auto [ok2, dev2] = security_verify(fx.pipeline.kp.pk, dev1, third.image);
  REQUIRE(ok2);
  // Old checkpoint's equality targets stale stored values now.
  auto [replayed, dev3] = security_verify(fx.pipeline.kp.pk, dev2, second.image);
  CHECK_FALSE(replayed);
  CHECK(dev3 == dev2);
}

TEST_CASE("devices pin a minimum difficulty") {
  DeviceFixture fx(1);  // pool built at d=1, device requires 1
  FirmwareImage variant = iterate_version(fx.pipeline.kp, fx.pipeline.checkpoint, {1},
                                          fx.pipeline.catalog);
  CHECK(functional_verify(fx.pipeline.kp.pk, fx.device, variant));
  FirmwareImage downgraded = variant;
  downgraded.difficulty = 0;
  CHECK_FALSE(functional_verify(fx.pipeline.kp.pk, fx.device, downgraded));
}

TEST_CASE("install tracks selections and closures inside the image") {
  const auto& kp = kp64();
  ModuleCatalog catalog = small_catalog(8, {{3, {1}}});
  CryptoPool pool(gen_crypto_modules(kp.pk, 8, 0, ByteView(to_bytes("install"))));
  Drbg rng(std::uint64_t{53});
  Checkpoint ckpt = init_firmware(kp, pool, modules_from(catalog, {1, 2, 3, 4, 5, 6, 7}), rng);
  DeviceState device = factory_init(DeviceState{}, ckpt.chain, 0);
  FirmwareImage image = iterate_version(kp, ckpt, {3, 5}, catalog);  // closure adds 1

  DeviceState unchanged = install(kp.pk, device, image, {});
  CHECK(unchanged.installed.empty());

  DeviceState with_closure = install(kp.pk, device, image, {3});
  CHECK(with_closure.installed == std::set<std::uint32_t>{1, 3});

  CHECK_THROWS_AS(install(kp.pk, device, image, {8}), Error);  // absent from image

  FirmwareImage stale = iterate_version(kp, ckpt, {2}, catalog);
  std::swap(stale.blocks[0], stale.blocks[1]);  // no longer matches the chain
  stale.block_info = aggregate_block_info(stale.blocks);
  CHECK_THROWS_AS(install(kp.pk, device, stale, {2}), Error);
}

TEST_CASE("streamed file verification matches the in-memory branch results") {
  DeviceFixture fx;
  auto dir = fresh_dir("stream");
  const auto& pk = fx.pipeline.kp.pk;

  FirmwareImage variant = iterate_version(fx.pipeline.kp, fx.pipeline.checkpoint, {2, 3},
                                          fx.pipeline.catalog);
  save_image(dir / "variant.img", pk, variant);
  auto ok = stream_verify_image_file(pk, fx.device, dir / "variant.img");
  CHECK(ok.accepted);
  CHECK(ok.kind == ImageKind::functional);
  CHECK_FALSE(ok.rotated.has_value());
  CHECK_FALSE(stream_verify_image_file(pk, fx.device, dir / "variant.img", "security").accepted);

  Drbg rng(std::uint64_t{54});
  FirmwareImage bad = mutate_image(variant, pk, rng, false);
  save_image(dir / "bad.img", pk, bad);
  CHECK_FALSE(stream_verify_image_file(pk, fx.device, dir / "bad.img").accepted);

  Checkpoint next = security_update(fx.pipeline.kp, fx.pipeline.checkpoint, fx.pipeline.pool,
                                    modules_from(fx.pipeline.catalog, {1, 2, 3, 4, 5, 6, 7}),
                                    fx.pipeline.rng);
  save_image(dir / "sec.img", pk, next.image);
  auto sec = stream_verify_image_file(pk, fx.device, dir / "sec.img");
  CHECK(sec.accepted);
  REQUIRE(sec.rotated.has_value());
  CHECK(sec.rotated->chain == next.chain);
  CHECK_FALSE(stream_verify_image_file(pk, fx.device, dir / "sec.img", "functional").accepted);
}
