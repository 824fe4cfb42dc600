#pragma once

#include <memory>

#include "imup/server.hpp"

namespace imup {

// Desk-scale reproductions of the paper-style experiments: Zipf request
// workloads against the distribution server, and the key-exposure forgery
// game against the device verifier.

struct WorkloadSpec {
  std::uint32_t num_modules = 200;
  std::uint32_t num_requests = 1000;
  double zipf_exponent = 1.0;
  std::uint32_t min_modules_per_request = 1;
  std::uint32_t max_modules_per_request = 5;
  std::uint64_t seed = 1;
};

// Popularity-weighted request stream: module draw probability proportional
// to rank^(-s); duplicates allowed across draws, per-request sets deduped.
std::vector<std::set<std::uint32_t>> gen_workload(const WorkloadSpec& spec,
                                                  const std::vector<std::uint32_t>& rank);

// Dependency-free synthetic catalog with ids 1..n in popularity order.
ModuleCatalog make_synthetic_catalog(std::uint32_t num_modules, std::uint64_t seed);

struct BenchConfig {
  WorkloadSpec workload;
  std::size_t chain_length = 7;
  unsigned pow_difficulty = 0;
  unsigned key_bits = 1024;
  std::size_t pool_size = 0;  // 0 = 2*(chain_length+1)
  std::filesystem::path work_dir;
  bool pad_builds = true;
};

struct BenchResult {
  ServerMetrics metrics;
  std::unique_ptr<DistributionServer> server;  // kept alive for inspection
};

BenchResult run_server_bench(const BenchConfig& config);

struct AttackScenario {
  unsigned key_bits = 256;          // trapdoor width in bits
  double exposed_fraction = 0.9375; // p: leaked prefix fraction
  unsigned pow_difficulty = 2;
  double attacker_speedup = 1000.0;
  unsigned trials = 30;             // simulation runs
  std::uint64_t seed = 1;
  bool analytic_only = false;       // timing probe + extrapolation only
  std::size_t chain_length = 7;     // fixture image size
};

// Per-run means across the scenario's runs. The first five fields are the
// CSV schema, in order.
struct AttackReport {
  double measured_attacker_trials = 0;
  double measured_attacker_time = 0;  // candidate scan + final PoW solve
  double defender_build_time = 0;     // one cache-miss build, pool prepared
  double device_verify_time = 0;      // one functional verification
  double extrapolated_time = 0;       // declared model, never a measurement
  double candidate_scan_time = 0;     // text-report component of attacker time
  double final_solve_time = 0;        // text-report component of attacker time
};

// Brute-forces the unexposed trapdoor suffix; every candidate is charged one
// public verification and success is confirmed end to end on the device.
AttackReport run_attack_sim(const AttackScenario& scenario);

unsigned attack_unknown_bits(const AttackScenario& scenario);

// CSV columns are exactly the report fields in declared order.
std::string metrics_csv_header();
std::string metrics_csv_row(const ServerMetrics& m);
std::string attack_csv_header();
std::string attack_csv_row(const AttackReport& r);

// Overwrite with header plus one row per entry (header-only when empty).
void write_metrics_csv(const std::filesystem::path& path, const std::vector<ServerMetrics>& rows);
void write_attack_csv(const std::filesystem::path& path, const std::vector<AttackReport>& rows);
// Append one row, emitting the header first when the file is new or empty.
void append_metrics_csv(const std::filesystem::path& path, const ServerMetrics& row);
void append_attack_csv(const std::filesystem::path& path, const AttackReport& row);

std::string metrics_text_report(const BenchConfig& config, const ServerMetrics& m);
std::string attack_text_report(const AttackScenario& scenario, const AttackReport& r);

}  // namespace imup
