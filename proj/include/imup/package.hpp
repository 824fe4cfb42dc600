#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "imup/chameleon.hpp"
#include "imup/pow.hpp"

namespace imup {

// Domain tag appended to block payloads before chameleon hashing, keeping
// block digests and PoW digests in disjoint message spaces.
ByteView block_domain_tag();
Bytes tagged_message(ByteView content);

enum class ModuleKind : std::uint8_t { script = 0, binary = 1 };

struct Manifest {
  std::vector<std::string> install_steps;   // ordered
  std::vector<std::uint32_t> dependencies;  // sorted ascending

  Bytes canonical_text() const;  // "step:<s>\n"* then "dep:<id>\n"*
  static Manifest parse(ByteView text);
  bool operator==(const Manifest&) const = default;
};

struct FunctionalModule {
  std::uint32_t module_id = 0;
  std::string name;
  ModuleKind kind = ModuleKind::binary;
  Bytes payload;
  Manifest manifest;
  bool operator==(const FunctionalModule&) const = default;
};

// "IMUPMOD1" record; the same bytes are written to .mod files and into
// image block slots, so the manifest travels under the block digest.
Bytes serialize_fmodule(const FunctionalModule& fm);
FunctionalModule parse_fmodule(ByteView data);
void save_fmodule(const std::filesystem::path& path, const FunctionalModule& fm);
FunctionalModule load_fmodule(const std::filesystem::path& path);

class ModuleCatalog {
 public:
  // Registers a new module with a fresh id. Dependencies must already be
  // in the catalog; names are unique.
  const FunctionalModule& package(const std::string& name, ModuleKind kind, Bytes payload,
                                  std::vector<std::string> install_steps,
                                  std::vector<std::uint32_t> dependencies);

  // Inserts a preexisting record (disk load); call validate() afterwards.
  void add(FunctionalModule fm);
  void validate() const;  // unique ids/names, deps exist, no self-refs, acyclic

  bool contains(std::uint32_t id) const { return modules_.count(id) != 0; }
  const FunctionalModule& get(std::uint32_t id) const;
  std::size_t size() const { return modules_.size(); }
  const std::map<std::uint32_t, FunctionalModule>& modules() const { return modules_; }

  // Request set plus every transitive dependency; throws on unknown ids.
  std::set<std::uint32_t> closure(const std::set<std::uint32_t>& ids) const;

  // Most popular first; always a permutation of the id set.
  const std::vector<std::uint32_t>& popularity_rank() const { return popularity_rank_; }
  void set_popularity_rank(std::vector<std::uint32_t> rank);

 private:
  std::map<std::uint32_t, FunctionalModule> modules_;
  std::set<std::string> names_;
  std::vector<std::uint32_t> popularity_rank_;
  std::uint32_t next_id_ = 1;
};

ModuleCatalog load_catalog_dir(const std::filesystem::path& dir);

// Reusable template block: random padding bound to a chameleon digest plus
// a PoW nonce over that digest. The digest survives later content swaps, so
// the PoW is paid once per module, ever.
struct CryptoModule {
  Bytes pstr;  // 32 random bytes
  Int pparam;  // random in [0, q)
  std::uint64_t solution_nonce = 0;
  ChameleonDigest digest;
  unsigned difficulty = 0;
  bool operator==(const CryptoModule&) const = default;
};

PowChallenge cmodule_challenge(const CryptoModule& cm);
bool validate_cmodule(const ChameleonPublicKey& pk, const CryptoModule& cm);

Bytes serialize_cmodule(const ChameleonPublicKey& pk, const CryptoModule& cm);
CryptoModule read_cmodule(ByteReader& r, const ChameleonPublicKey& pk, unsigned difficulty);

// Alg-style batch generation: N modules at the given difficulty, seeded and
// canonically ordered (sorted by pstr). Parallelizes across modules under
// IMUP_THREADS without changing the result.
std::vector<CryptoModule> gen_crypto_modules(const ChameleonPublicKey& pk, std::size_t count,
                                             unsigned difficulty, ByteView seed);

void save_pool_file(const std::filesystem::path& path, const ChameleonPublicKey& pk,
                    const std::vector<CryptoModule>& modules);
std::vector<CryptoModule> load_pool_file(const std::filesystem::path& path,
                                         const ChameleonPublicKey& pk);

// Hands out unused modules under a mutual-exclusion claim; a module never
// lands in two images.
class CryptoPool {
 public:
  CryptoPool() = default;
  explicit CryptoPool(std::vector<CryptoModule> modules);
  CryptoPool(CryptoPool&& other) noexcept;
  CryptoPool& operator=(CryptoPool&&) = delete;

  std::vector<CryptoModule> claim(std::size_t n);  // throws when exhausted
  std::size_t remaining() const;

 private:
  mutable std::mutex mu_;
  std::vector<CryptoModule> modules_;
  std::size_t next_ = 0;
};

}  // namespace imup
