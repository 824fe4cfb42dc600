#include "imup/package.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <thread>

namespace imup {

namespace {

constexpr std::string_view kModuleMagic = "IMUPMOD1";
constexpr std::string_view kPoolMagic = "IMUPPOL1";
constexpr std::uint8_t kBlockTag[8] = {'I', 'M', 'U', 'P', '-', 'B', 'L', 'K'};

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open file: " + path.string());
  return Bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const Bytes& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open file for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!f) throw Error("short write: " + path.string());
}

}  // namespace

ByteView block_domain_tag() { return ByteView(kBlockTag, sizeof kBlockTag); }

Bytes tagged_message(ByteView content) {
  Bytes m(content.begin(), content.end());
  put_bytes(m, block_domain_tag());
  return m;
}

Bytes Manifest::canonical_text() const {
  Bytes out;
  for (const auto& step : install_steps) {
    put_bytes(out, to_bytes("step:"));
    put_bytes(out, to_bytes(step));
    out.push_back('\n');
  }
  for (std::uint32_t dep : dependencies) {
    put_bytes(out, to_bytes("dep:"));
    put_bytes(out, to_bytes(std::to_string(dep)));
    out.push_back('\n');
  }
  return out;
}

Manifest Manifest::parse(ByteView text) {
  Manifest m;
  std::string line;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i < text.size() && text[i] != '\n') {
      line.push_back(static_cast<char>(text[i]));
      continue;
    }
    if (i == text.size() && line.empty()) break;
    if (i == text.size()) throw Error("manifest missing trailing newline");
    if (line.rfind("step:", 0) == 0) {
      m.install_steps.push_back(line.substr(5));
    } else if (line.rfind("dep:", 0) == 0) {
      m.dependencies.push_back(static_cast<std::uint32_t>(std::stoul(line.substr(4))));
    } else {
      throw Error("unrecognized manifest line: " + line);
    }
    line.clear();
  }
  if (!std::is_sorted(m.dependencies.begin(), m.dependencies.end()))
    throw Error("manifest dependencies not in canonical order");
  return m;
}

Bytes serialize_fmodule(const FunctionalModule& fm) {
  Bytes out;
  put_bytes(out, to_bytes(kModuleMagic));
  put_u32be(out, fm.module_id);
  put_u8(out, static_cast<std::uint8_t>(fm.kind));
  put_lp_string(out, fm.name);
  put_lp(out, ByteView(fm.payload));
  put_lp(out, ByteView(fm.manifest.canonical_text()));
  return out;
}

FunctionalModule parse_fmodule(ByteView data) {
  ByteReader r{data};
  r.expect_magic(kModuleMagic);
  FunctionalModule fm;
  fm.module_id = r.u32be();
  std::uint8_t kind = r.u8();
  if (kind > 1) throw Error("bad module kind byte");
  fm.kind = static_cast<ModuleKind>(kind);
  fm.name = r.lp_string();
  fm.payload = r.lp_bytes();
  fm.manifest = Manifest::parse(ByteView(r.lp_bytes()));
  if (!r.done()) throw Error("trailing bytes after module record");
  return fm;
}

void save_fmodule(const std::filesystem::path& path, const FunctionalModule& fm) {
  write_file(path, serialize_fmodule(fm));
}

FunctionalModule load_fmodule(const std::filesystem::path& path) {
  return parse_fmodule(ByteView(read_file(path)));
}

const FunctionalModule& ModuleCatalog::package(const std::string& name, ModuleKind kind,
                                               Bytes payload,
                                               std::vector<std::string> install_steps,
                                               std::vector<std::uint32_t> dependencies) {
  if (names_.count(name)) throw Error("duplicate module name: " + name);
  std::uint32_t id = next_id_;
  for (std::uint32_t dep : dependencies) {
    if (dep == id) throw Error("module cannot depend on itself");
    if (!contains(dep)) throw Error("missing dependency: " + std::to_string(dep));
  }
  std::sort(dependencies.begin(), dependencies.end());
  dependencies.erase(std::unique(dependencies.begin(), dependencies.end()), dependencies.end());

  FunctionalModule fm;
  fm.module_id = id;
  fm.name = name;
  fm.kind = kind;
  fm.payload = std::move(payload);
  fm.manifest.install_steps = std::move(install_steps);
  fm.manifest.dependencies = std::move(dependencies);

  auto [it, _] = modules_.emplace(id, std::move(fm));
  names_.insert(name);
  popularity_rank_.push_back(id);
  next_id_ = id + 1;
  return it->second;
}

void ModuleCatalog::add(FunctionalModule fm) {
  if (modules_.count(fm.module_id))
    throw Error("duplicate module id: " + std::to_string(fm.module_id));
  if (names_.count(fm.name)) throw Error("duplicate module name: " + fm.name);
  names_.insert(fm.name);
  next_id_ = std::max(next_id_, fm.module_id + 1);
  popularity_rank_.push_back(fm.module_id);
  modules_.emplace(fm.module_id, std::move(fm));
}

void ModuleCatalog::validate() const {
  for (const auto& [id, fm] : modules_) {
    for (std::uint32_t dep : fm.manifest.dependencies) {
      if (dep == id) throw Error("module depends on itself: " + std::to_string(id));
      if (!contains(dep))
        throw Error("module " + std::to_string(id) + " depends on unknown " + std::to_string(dep));
    }
  }
  // Kahn over the dependency graph; leftovers mean a cycle.
  std::map<std::uint32_t, std::size_t> pending;
  for (const auto& [id, fm] : modules_) pending[id] = fm.manifest.dependencies.size();
  std::vector<std::uint32_t> ready;
  for (const auto& [id, n] : pending)
    if (n == 0) ready.push_back(id);
  std::size_t resolved = 0;
  std::map<std::uint32_t, std::vector<std::uint32_t>> dependents;
  for (const auto& [id, fm] : modules_)
    for (std::uint32_t dep : fm.manifest.dependencies) dependents[dep].push_back(id);
  while (!ready.empty()) {
    std::uint32_t id = ready.back();
    ready.pop_back();
    ++resolved;
    for (std::uint32_t user : dependents[id])
      if (--pending[user] == 0) ready.push_back(user);
  }
  if (resolved != modules_.size()) throw Error("cyclic dependency in catalog");
}

const FunctionalModule& ModuleCatalog::get(std::uint32_t id) const {
  auto it = modules_.find(id);
  if (it == modules_.end()) throw Error("unknown module id: " + std::to_string(id));
  return it->second;
}

std::set<std::uint32_t> ModuleCatalog::closure(const std::set<std::uint32_t>& ids) const {
  std::set<std::uint32_t> out;
  std::vector<std::uint32_t> work(ids.begin(), ids.end());
  while (!work.empty()) {
    std::uint32_t id = work.back();
    work.pop_back();
    if (!out.insert(id).second) continue;
    for (std::uint32_t dep : get(id).manifest.dependencies) work.push_back(dep);
  }
  return out;
}

void ModuleCatalog::set_popularity_rank(std::vector<std::uint32_t> rank) {
  std::set<std::uint32_t> seen(rank.begin(), rank.end());
  if (seen.size() != rank.size() || seen.size() != modules_.size())
    throw Error("popularity rank is not a permutation of the module ids");
  for (std::uint32_t id : seen)
    if (!contains(id)) throw Error("popularity rank lists unknown id");
  popularity_rank_ = std::move(rank);
}

ModuleCatalog load_catalog_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".mod")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  ModuleCatalog catalog;
  for (const auto& f : files) catalog.add(load_fmodule(f));
  catalog.validate();
  // Rank by id; callers can override from workload data.
  std::vector<std::uint32_t> rank;
  for (const auto& [id, _] : catalog.modules()) rank.push_back(id);
  catalog.set_popularity_rank(std::move(rank));
  return catalog;
}

PowChallenge cmodule_challenge(const CryptoModule& cm) {
  return PowChallenge{cm.digest.encoded(), cm.difficulty};
}

bool validate_cmodule(const ChameleonPublicKey& pk, const CryptoModule& cm) {
  if (cm.pstr.size() != 32) return false;
  if (!verify_pair(pk, ByteView(tagged_message(ByteView(cm.pstr))), cm.pparam, cm.digest))
    return false;
  return verify_pow_nonce(pk, cmodule_challenge(cm), cm.solution_nonce);
}

Bytes serialize_cmodule(const ChameleonPublicKey& pk, const CryptoModule& cm) {
  Bytes out;
  put_bytes(out, ByteView(cm.pstr));
  put_bytes(out, ByteView(to_fixed_be(cm.pparam, pk.scalar_width())));
  put_u64be(out, cm.solution_nonce);
  put_bytes(out, ByteView(cm.digest.encoded()));
  return out;
}

CryptoModule read_cmodule(ByteReader& r, const ChameleonPublicKey& pk, unsigned difficulty) {
  CryptoModule cm;
  cm.pstr = r.take(32);
  cm.pparam = from_be(ByteView(r.take(pk.scalar_width())));
  cm.solution_nonce = r.u64be();
  cm.digest = decode_digest(ByteView(r.take(pk.digest_width())));
  cm.difficulty = difficulty;
  return cm;
}

std::vector<CryptoModule> gen_crypto_modules(const ChameleonPublicKey& pk, std::size_t count,
                                             unsigned difficulty, ByteView seed) {
  if (count == 0) throw Error("module count must be at least 1");
  if (!difficulty_in_range(pk, difficulty)) throw Error("pow difficulty out of range");

  Drbg root{seed};
  std::vector<CryptoModule> out(count);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};

  auto build_one = [&](std::size_t i) {
    Drbg rng = root.child(static_cast<std::uint64_t>(i));
    CryptoModule cm;
    cm.pstr = rng.bytes(32);
    cm.pparam = uniform_below(rng, pk.q);
    cm.digest = chash(pk, ByteView(tagged_message(ByteView(cm.pstr))), cm.pparam);
    cm.difficulty = difficulty;
    auto sol = solve_pow(pk, cmodule_challenge(cm));
    if (!sol) {
      failed.store(true);
      return;
    }
    cm.solution_nonce = sol->nonce;
    out[i] = std::move(cm);
  };

  unsigned workers = std::min<std::size_t>(pow_worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) build_one(i);
  } else {
    auto drain = [&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= count || failed.load()) return;
        build_one(i);
      }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(drain);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw Error("pow solve failed during module generation");

  std::sort(out.begin(), out.end(),
            [](const CryptoModule& a, const CryptoModule& b) { return a.pstr < b.pstr; });
  return out;
}

void save_pool_file(const std::filesystem::path& path, const ChameleonPublicKey& pk,
                    const std::vector<CryptoModule>& modules) {
  if (modules.empty()) throw Error("refusing to write empty pool");
  unsigned difficulty = modules.front().difficulty;
  Bytes out;
  put_bytes(out, to_bytes(kPoolMagic));
  put_u8(out, static_cast<std::uint8_t>(difficulty));
  put_u32be(out, static_cast<std::uint32_t>(modules.size()));
  for (const auto& cm : modules) {
    if (cm.difficulty != difficulty) throw Error("pool mixes difficulties");
    put_bytes(out, ByteView(serialize_cmodule(pk, cm)));
  }
  write_file(path, out);
}

std::vector<CryptoModule> load_pool_file(const std::filesystem::path& path,
                                         const ChameleonPublicKey& pk) {
  Bytes data = read_file(path);
  ByteReader r{ByteView(data)};
  r.expect_magic(kPoolMagic);
  unsigned difficulty = r.u8();
  std::uint32_t count = r.u32be();
  std::vector<CryptoModule> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(read_cmodule(r, pk, difficulty));
  if (!r.done()) throw Error("trailing bytes after pool records");
  return out;
}

CryptoPool::CryptoPool(std::vector<CryptoModule> modules) : modules_(std::move(modules)) {}

CryptoPool::CryptoPool(CryptoPool&& other) noexcept {
  std::scoped_lock lock(other.mu_);
  modules_ = std::move(other.modules_);
  next_ = other.next_;
}

std::vector<CryptoModule> CryptoPool::claim(std::size_t n) {
  std::scoped_lock lock(mu_);
  if (modules_.size() - next_ < n) throw Error("crypto pool exhausted");
  std::vector<CryptoModule> out(modules_.begin() + static_cast<std::ptrdiff_t>(next_),
                                modules_.begin() + static_cast<std::ptrdiff_t>(next_ + n));
  next_ += n;
  return out;
}

std::size_t CryptoPool::remaining() const {
  std::scoped_lock lock(mu_);
  return modules_.size() - next_;
}

}  // namespace imup
