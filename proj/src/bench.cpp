#include "imup/bench.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace imup {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::set<std::uint32_t>> gen_workload(const WorkloadSpec& spec,
                                                  const std::vector<std::uint32_t>& rank) {
  if (spec.zipf_exponent <= 0) throw Error("zipf exponent must be positive");
  if (spec.min_modules_per_request < 1 ||
      spec.min_modules_per_request > spec.max_modules_per_request)
    throw Error("bad modules-per-request range");
  if (spec.num_modules < spec.max_modules_per_request)
    throw Error("need at least as many modules as the largest request");
  if (rank.size() < spec.num_modules) throw Error("popularity rank shorter than module count");

  std::vector<double> cumulative(spec.num_modules);
  double total = 0;
  for (std::uint32_t k = 0; k < spec.num_modules; ++k) {
    total += std::pow(static_cast<double>(k + 1), -spec.zipf_exponent);
    cumulative[k] = total;
  }

  Drbg rng = Drbg(spec.seed).child("workload");
  std::vector<std::set<std::uint32_t>> requests;
  requests.reserve(spec.num_requests);
  std::uint32_t span = spec.max_modules_per_request - spec.min_modules_per_request + 1;
  for (std::uint32_t i = 0; i < spec.num_requests; ++i) {
    std::uint32_t draws = spec.min_modules_per_request +
                          static_cast<std::uint32_t>(rng.uniform(span));
    std::set<std::uint32_t> request;
    for (std::uint32_t d = 0; d < draws; ++d) {
      double u = rng.unit_double() * total;
      auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      std::size_t idx = std::min<std::size_t>(it - cumulative.begin(), spec.num_modules - 1);
      request.insert(rank[idx]);
    }
    requests.push_back(std::move(request));
  }
  return requests;
}

ModuleCatalog make_synthetic_catalog(std::uint32_t num_modules, std::uint64_t seed) {
  Drbg rng = Drbg(seed).child("catalog");
  ModuleCatalog catalog;
  for (std::uint32_t i = 1; i <= num_modules; ++i) {
    Drbg mod = rng.child(i);
    std::size_t size = 64 + mod.uniform(192);
    catalog.package("mod-" + std::to_string(i), i % 2 ? ModuleKind::binary : ModuleKind::script,
                    mod.bytes(size), {"install"}, {});
  }
  return catalog;
}

BenchResult run_server_bench(const BenchConfig& config) {
  if (config.work_dir.empty()) throw Error("bench work_dir required");
  std::filesystem::create_directories(config.work_dir);

  Drbg root(config.workload.seed);
  Bytes key_seed = root.child("key").bytes(32);
  ChameleonKeyPair kp = keygen(config.key_bits, ByteView(key_seed));
  ModuleCatalog catalog = make_synthetic_catalog(config.workload.num_modules,
                                                 config.workload.seed);
  std::vector<std::uint32_t> rank = catalog.popularity_rank();

  std::size_t pool_size =
      config.pool_size ? config.pool_size : 2 * (config.chain_length + 1);
  Bytes pool_seed = root.child("pool").bytes(32);
  auto prep_start = Clock::now();
  std::vector<CryptoModule> modules =
      gen_crypto_modules(kp.pk, pool_size, config.pow_difficulty, ByteView(pool_seed));
  double prep_s = seconds_since(prep_start);

  ServerOptions options;
  options.chain_length = config.chain_length;
  options.image_dir = config.work_dir / "images";
  options.seed = config.workload.seed;
  options.pad_builds = config.pad_builds;

  auto server = std::make_unique<DistributionServer>(kp, std::move(catalog),
                                                     CryptoPool(std::move(modules)), options);
  server->set_preparation_time(prep_s);

  for (const auto& request : gen_workload(config.workload, rank))
    server->handle_request(request);

  BenchResult result;
  result.metrics = server->metrics();
  result.server = std::move(server);
  return result;
}

unsigned attack_unknown_bits(const AttackScenario& scenario) {
  if (scenario.exposed_fraction < 0 || scenario.exposed_fraction >= 1)
    throw Error("exposed fraction must be in [0, 1)");
  auto exposed = static_cast<unsigned>(scenario.exposed_fraction * scenario.key_bits + 1e-9);
  return scenario.key_bits - exposed;
}

namespace {

unsigned group_bits_for_trapdoor(unsigned key_bits) {
  if (key_bits >= 8 && key_bits < 256) return 2 * key_bits;
  if (key_bits == 256) return 1024;
  throw Error("unsupported trapdoor width: " + std::to_string(key_bits));
}

struct AttackFixture {
  ChameleonKeyPair kp;
  std::unique_ptr<DistributionServer> server;
  DeviceState device;
  FirmwareImage target;
};

AttackFixture make_attack_fixture(const AttackScenario& scenario, Drbg& rng,
                                  const std::filesystem::path& dir, std::size_t chain_length) {
  AttackFixture fx;
  Bytes key_seed = rng.child("key").bytes(32);
  fx.kp = keygen(group_bits_for_trapdoor(scenario.key_bits), ByteView(key_seed));
  if (bit_width(fx.kp.pk.q) != scenario.key_bits)
    throw Error("group order width does not match requested trapdoor width");

  ModuleCatalog catalog =
      make_synthetic_catalog(static_cast<std::uint32_t>(chain_length) + 2, rng.u64());
  Bytes pool_seed = rng.child("pool").bytes(32);
  std::vector<CryptoModule> modules = gen_crypto_modules(
      fx.kp.pk, chain_length + 1, scenario.pow_difficulty, ByteView(pool_seed));

  ServerOptions options;
  options.chain_length = chain_length;
  options.image_dir = dir;
  options.seed = rng.u64();
  options.pad_builds = false;  // every distinct request must really build
  fx.server = std::make_unique<DistributionServer>(fx.kp, std::move(catalog),
                                                   CryptoPool(std::move(modules)), options);

  fx.device = factory_init(DeviceState{}, fx.server->active_checkpoint()->chain,
                           scenario.pow_difficulty);
  std::set<std::uint32_t> target_ids = chain_length >= 2 ? std::set<std::uint32_t>{1, 2}
                                                         : std::set<std::uint32_t>{1};
  HandleResult served = fx.server->handle_request(target_ids);
  fx.target = load_image(served.image_path, fx.kp.pk);
  return fx;
}

Bytes forge_content(const Bytes& original) {
  FunctionalModule fm = parse_fmodule(ByteView(original));
  if (fm.payload.empty()) fm.payload.push_back(0);
  fm.payload[0] ^= 0x5a;
  return serialize_fmodule(fm);
}

}  // namespace

AttackReport run_attack_sim(const AttackScenario& scenario) {
  unsigned unknown = attack_unknown_bits(scenario);
  if (!scenario.analytic_only && unknown > 24)
    throw Error("empirical attack capped at 24 unknown bits; use analytic-only mode");
  if (scenario.trials == 0) throw Error("attack scenario needs at least one run");

  auto tmp = std::filesystem::temp_directory_path() /
             ("imup-attack-" + std::to_string(scenario.seed) + "-" +
              std::to_string(::getpid()));
  std::filesystem::create_directories(tmp);

  Drbg root = Drbg(scenario.seed).child("attack");
  const std::size_t chain_length = std::max<std::size_t>(scenario.chain_length, 1);

  double sum_trials = 0, sum_scan = 0, sum_solve = 0, sum_defend = 0, sum_verify = 0;

  for (unsigned run = 0; run < scenario.trials; ++run) {
    Drbg rng = root.child(run);
    AttackFixture fx =
        make_attack_fixture(scenario, rng, tmp / ("run-" + std::to_string(run)), chain_length);
    const ChameleonPublicKey& pk = fx.kp.pk;
    const Int& q = pk.q;

    // Defender: one legitimate cache-miss build from the prepared pool.
    {
      std::set<std::uint32_t> probe = chain_length >= 2 ? std::set<std::uint32_t>{1, 3}
                                                        : std::set<std::uint32_t>{2};
      auto t0 = Clock::now();
      fx.server->handle_request(probe);
      sum_defend += seconds_since(t0);
    }
    {
      auto t0 = Clock::now();
      bool ok = functional_verify(pk, fx.device, fx.target);
      sum_verify += seconds_since(t0);
      if (!ok) throw Error("attack fixture target image failed verification");
    }

    const FilledBlock& victim = fx.target.blocks.front();
    Bytes forged = forge_content(victim.content);
    Bytes m_old = tagged_message(ByteView(victim.content));
    Bytes m_new = tagged_message(ByteView(forged));

    // Attacker-side closed form: r'(x) = r + (H(m) - H(m')) / x mod q.
    Int delta = (message_exponent(pk, ByteView(m_old)) -
                 message_exponent(pk, ByteView(m_new))) % q;
    if (delta < 0) delta += q;

    Int prefix = (fx.kp.trapdoor >> unknown) << unknown;
    std::uint64_t suffix_space =
        scenario.analytic_only ? (std::uint64_t{1} << 12)
                               : (std::uint64_t{1} << unknown);

    std::uint64_t trials = 0;
    std::optional<Int> found_r;
    auto scan_start = Clock::now();
    for (std::uint64_t s = 0; s < suffix_space; ++s) {
      ++trials;
      Int candidate = prefix + s;
      if (candidate <= 0 || candidate >= q) continue;
      Int r_forged = (victim.r + delta * invert_mod(candidate, q)) % q;
      // One public verification per candidate; no secret is ever compared.
      if (verify_pair(pk, ByteView(m_new), r_forged, victim.digest)) {
        FirmwareImage forged_image = fx.target;
        forged_image.blocks.front().content = forged;
        forged_image.blocks.front().r = r_forged;
        if (functional_verify(pk, fx.device, forged_image)) {
          found_r = r_forged;
          break;
        }
      }
    }
    double scan_s = seconds_since(scan_start);
    if (!scenario.analytic_only && !found_r)
      throw Error("exhaustive scan failed to find the trapdoor");

    // The injected module still owes a fresh PoW at the device's difficulty.
    auto solve_start = Clock::now();
    PowChallenge final_challenge{victim.digest.encoded(), scenario.pow_difficulty};
    if (!solve_pow(pk, final_challenge)) throw Error("final pow solve failed");
    double solve_s = seconds_since(solve_start);

    sum_trials += static_cast<double>(trials);
    sum_scan += scan_s;
    sum_solve += solve_s;
  }

  double n = scenario.trials;
  AttackReport report;
  report.measured_attacker_trials = sum_trials / n;
  report.candidate_scan_time = sum_scan / n;
  report.final_solve_time = sum_solve / n;
  report.measured_attacker_time = report.candidate_scan_time + report.final_solve_time;
  report.defender_build_time = sum_defend / n;
  report.device_verify_time = sum_verify / n;
  double per_trial = report.measured_attacker_trials > 0
                         ? report.candidate_scan_time / report.measured_attacker_trials
                         : 0;
  report.extrapolated_time = per_trial * std::pow(2.0, unknown) *
                             std::pow(16.0, scenario.pow_difficulty) /
                             scenario.attacker_speedup;

  std::error_code ec;
  std::filesystem::remove_all(tmp, ec);
  return report;
}

std::string metrics_csv_header() {
  return "total_time_s,hit_rate_pct,firmware_count,storage_bytes,preparation_time_s,"
         "first_processing_time_s,subsequent_processing_time_s,avg_search_time_ms";
}

std::string metrics_csv_row(const ServerMetrics& m) {
  std::ostringstream out;
  out << fmt_double(m.total_time_s) << ',' << fmt_double(m.hit_rate_pct) << ','
      << m.firmware_count << ',' << m.storage_bytes << ',' << fmt_double(m.preparation_time_s)
      << ',' << fmt_double(m.first_processing_time_s) << ','
      << fmt_double(m.subsequent_processing_time_s) << ',' << fmt_double(m.avg_search_time_ms);
  return out.str();
}

std::string attack_csv_header() {
  return "measured_attacker_trials,measured_attacker_time,defender_build_time,"
         "device_verify_time,extrapolated_time";
}

std::string attack_csv_row(const AttackReport& r) {
  std::ostringstream out;
  out << fmt_double(r.measured_attacker_trials) << ',' << fmt_double(r.measured_attacker_time)
      << ',' << fmt_double(r.defender_build_time) << ',' << fmt_double(r.device_verify_time)
      << ',' << fmt_double(r.extrapolated_time);
  return out.str();
}

namespace {

void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::vector<std::string>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open for writing: " + path.string());
  f << header << '\n';
  for (const auto& row : rows) f << row << '\n';
  if (!f) throw Error("short write: " + path.string());
}

void append_csv(const std::filesystem::path& path, const std::string& header,
                const std::string& row) {
  bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, std::ios::app);
  if (!f) throw Error("cannot open for appending: " + path.string());
  if (fresh) f << header << '\n';
  f << row << '\n';
  if (!f) throw Error("short write: " + path.string());
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<ServerMetrics>& rows) {
  std::vector<std::string> lines;
  lines.reserve(rows.size());
  for (const auto& m : rows) lines.push_back(metrics_csv_row(m));
  write_csv(path, metrics_csv_header(), lines);
}

void write_attack_csv(const std::filesystem::path& path, const std::vector<AttackReport>& rows) {
  std::vector<std::string> lines;
  lines.reserve(rows.size());
  for (const auto& r : rows) lines.push_back(attack_csv_row(r));
  write_csv(path, attack_csv_header(), lines);
}

void append_metrics_csv(const std::filesystem::path& path, const ServerMetrics& row) {
  append_csv(path, metrics_csv_header(), metrics_csv_row(row));
}

void append_attack_csv(const std::filesystem::path& path, const AttackReport& row) {
  append_csv(path, attack_csv_header(), attack_csv_row(row));
}

std::string metrics_text_report(const BenchConfig& config, const ServerMetrics& m) {
  std::ostringstream out;
  out << "server bench: modules=" << config.workload.num_modules
      << " requests=" << config.workload.num_requests << " L=" << config.chain_length
      << " pow_difficulty=" << config.pow_difficulty << " zipf=" << config.workload.zipf_exponent
      << " key_bits=" << config.key_bits << " seed=" << config.workload.seed << '\n'
      << "  total_time_s=" << m.total_time_s << '\n'
      << "  hit_rate_pct=" << m.hit_rate_pct << '\n'
      << "  firmware_count=" << m.firmware_count << '\n'
      << "  storage_bytes=" << m.storage_bytes << '\n'
      << "  preparation_time_s=" << m.preparation_time_s << '\n'
      << "  first_processing_time_s=" << m.first_processing_time_s << '\n'
      << "  subsequent_processing_time_s=" << m.subsequent_processing_time_s << '\n'
      << "  avg_search_time_ms=" << m.avg_search_time_ms << '\n';
  return out.str();
}

std::string attack_text_report(const AttackScenario& scenario, const AttackReport& r) {
  std::ostringstream out;
  out << "attack sim: key_bits=" << scenario.key_bits << " exposed=" << scenario.exposed_fraction
      << " unknown_bits=" << attack_unknown_bits(scenario)
      << " pow_difficulty=" << scenario.pow_difficulty << " runs=" << scenario.trials
      << " seed=" << scenario.seed << (scenario.analytic_only ? " (analytic probe)" : "") << '\n'
      << "  measured_attacker_trials=" << r.measured_attacker_trials << '\n'
      << "  measured_attacker_time=" << r.measured_attacker_time
      << "  (candidate scan " << r.candidate_scan_time << " + final pow solve "
      << r.final_solve_time << ")\n"
      << "  defender_build_time=" << r.defender_build_time
      << "  (one cache-miss build from the prepared pool)\n"
      << "  device_verify_time=" << r.device_verify_time << '\n'
      << "  extrapolated_time=" << r.extrapolated_time
      << "  (model: per-trial * 2^unknown * 16^d / speedup " << scenario.attacker_speedup
      << ")\n";
  return out.str();
}

}  // namespace imup
