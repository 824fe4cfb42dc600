#include <doctest.h>

#include <fstream>

#include "test_support.hpp"

using namespace imup;
using namespace imup::test;

// File-format property: decode(encode(x)) == x and re-encoding is
// byte-identical, across randomized instances of every persisted record.

namespace {

Bytes file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  return Bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

FunctionalModule random_module(Drbg& rng, std::uint32_t id) {
  FunctionalModule fm;
  fm.module_id = id;
  fm.name = "mod-" + std::to_string(id) + "-" + to_hex(ByteView(rng.bytes(3)));
  fm.kind = rng.uniform(2) ? ModuleKind::binary : ModuleKind::script;
  fm.payload = rng.bytes(rng.uniform(300));
  for (std::uint64_t i = 0, n = rng.uniform(4); i < n; ++i)
    fm.manifest.install_steps.push_back("step " + std::to_string(rng.u64() % 1000));
  for (std::uint32_t dep = 1; dep < id; ++dep)
    if (rng.uniform(5) == 0) fm.manifest.dependencies.push_back(dep);
  return fm;
}

}  // namespace

TEST_CASE("key files: randomized round-trips") {
  auto dir = fresh_dir("fmt-key");
  Drbg rng(std::uint64_t{61});
  for (int i = 0; i < 25; ++i) {
    unsigned bits = 16 + 2 * static_cast<unsigned>(rng.uniform(56));  // 16..126
    ChameleonKeyPair kp = keygen(bits, ByteView(rng.bytes(8)));
    bool secret = rng.uniform(2) == 1;
    auto path = dir / ("k" + std::to_string(i) + ".key");
    save_key_file(path, kp, secret);
    Bytes first = file_bytes(path);
    LoadedKey loaded = load_key_file(path);
    CHECK(loaded.pk == kp.pk);
    CHECK(loaded.trapdoor.has_value() == secret);
    if (secret) CHECK(*loaded.trapdoor == kp.trapdoor);
    save_key_file(path, secret ? ChameleonKeyPair{loaded.pk, *loaded.trapdoor}
                               : ChameleonKeyPair{loaded.pk, 1},
                  secret);
    CHECK(file_bytes(path) == first);
  }
}

TEST_CASE("module files: randomized round-trips") {
  auto dir = fresh_dir("fmt-mod");
  Drbg rng(std::uint64_t{62});
  for (std::uint32_t i = 1; i <= 40; ++i) {
    FunctionalModule fm = random_module(rng, i);
    auto path = dir / ("m" + std::to_string(i) + ".mod");
    save_fmodule(path, fm);
    Bytes first = file_bytes(path);
    FunctionalModule loaded = load_fmodule(path);
    CHECK(loaded == fm);
    save_fmodule(path, loaded);
    CHECK(file_bytes(path) == first);
  }
}

TEST_CASE("pool files: randomized round-trips") {
  auto dir = fresh_dir("fmt-pool");
  Drbg rng(std::uint64_t{63});
  const auto& pk = kp64().pk;
  for (int i = 0; i < 10; ++i) {
    auto mods = gen_crypto_modules(pk, 1 + rng.uniform(12), 1, ByteView(rng.bytes(6)));
    auto path = dir / ("p" + std::to_string(i) + ".pool");
    save_pool_file(path, pk, mods);
    Bytes first = file_bytes(path);
    CHECK(load_pool_file(path, pk) == mods);
    save_pool_file(path, pk, load_pool_file(path, pk));
    CHECK(file_bytes(path) == first);
  }
}

TEST_CASE("image and device-state files: randomized round-trips") {
  auto dir = fresh_dir("fmt-img");
  Drbg rng(std::uint64_t{64});
  PipelineFixture fx(kp64(), 10, 5, 0, 77, 6);
  for (int i = 0; i < 25; ++i) {
    std::set<std::uint32_t> request;
    for (std::uint64_t k = 0, n = rng.uniform(5); k < n; ++k)
      request.insert(1 + static_cast<std::uint32_t>(rng.uniform(10)));
    if (fx.catalog.closure(request).size() > 5) continue;
    FirmwareImage image = iterate_version(fx.kp, fx.checkpoint, request, fx.catalog);
    auto path = dir / ("i" + std::to_string(i) + ".img");
    save_image(path, fx.kp.pk, image);
    Bytes first = file_bytes(path);
    CHECK(load_image(path, fx.kp.pk) == image);
    save_image(path, fx.kp.pk, load_image(path, fx.kp.pk));
    CHECK(file_bytes(path) == first);
  }

  for (int i = 0; i < 15; ++i) {
    DeviceState state = factory_init(DeviceState{}, fx.checkpoint.chain,
                                     static_cast<unsigned>(rng.uniform(4)));
    for (std::uint64_t k = 0, n = rng.uniform(6); k < n; ++k)
      state.installed.insert(static_cast<std::uint32_t>(rng.uniform(50)));
    auto path = dir / ("d" + std::to_string(i) + ".dev");
    save_device_state(path, DeviceFile{fx.kp.pk, state});
    Bytes first = file_bytes(path);
    DeviceFile loaded = load_device_state(path);
    CHECK(loaded.pk == fx.kp.pk);
    CHECK(loaded.state == state);
    save_device_state(path, loaded);
    CHECK(file_bytes(path) == first);
  }
}

TEST_CASE("truncated and corrupted records fail loudly") {
  auto dir = fresh_dir("fmt-bad");
  const auto& kp = kp64();
  save_key_file(dir / "k.key", kp, true);
  Bytes data = file_bytes(dir / "k.key");

  Bytes truncated(data.begin(), data.begin() + data.size() / 2);
  std::ofstream(dir / "trunc.key", std::ios::binary)
      .write(reinterpret_cast<const char*>(truncated.data()),
             static_cast<std::streamsize>(truncated.size()));
  CHECK_THROWS_AS(load_key_file(dir / "trunc.key"), Error);

  Bytes wrong = data;
  wrong[0] ^= 0xff;
  std::ofstream(dir / "magic.key", std::ios::binary)
      .write(reinterpret_cast<const char*>(wrong.data()),
             static_cast<std::streamsize>(wrong.size()));
  CHECK_THROWS_AS(load_key_file(dir / "magic.key"), Error);
}
