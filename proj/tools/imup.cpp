#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>

#include "imup/bench.hpp"
#include "imup/device.hpp"
#include "imup/server.hpp"

using namespace imup;

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop.store(true); }

Bytes read_file_or_die(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return Bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::set<std::uint32_t> parse_id_list(const std::string& csv) {
  std::set<std::uint32_t> ids;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ','))
    if (!cell.empty()) ids.insert(static_cast<std::uint32_t>(std::stoul(cell)));
  return ids;
}

int cmd_keygen(unsigned bits, const std::string& seed, const std::string& out,
               const std::string& public_out) {
  ChameleonKeyPair kp = keygen(bits, ByteView(to_bytes(seed)));
  save_key_file(out, kp, true);
  std::cout << "wrote keypair (" << bits << " bits) to " << out << "\n";
  if (!public_out.empty()) {
    save_key_file(public_out, kp, false);
    std::cout << "wrote public key to " << public_out << "\n";
  }
  return 0;
}

int cmd_package(const std::string& dir, const std::string& name, const std::string& kind,
                const std::string& payload_path, const std::vector<std::string>& steps,
                const std::vector<std::uint32_t>& deps) {
  ModuleCatalog catalog;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (std::filesystem::exists(dir)) {
    bool any = false;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.path().extension() == ".mod") any = true;
    if (any) catalog = load_catalog_dir(dir);
  }
  Bytes payload = payload_path.empty() ? Bytes{} : read_file_or_die(payload_path);
  const FunctionalModule& fm =
      catalog.package(name, kind == "script" ? ModuleKind::script : ModuleKind::binary,
                      std::move(payload), steps, deps);
  auto path = std::filesystem::path(dir) / ("m" + std::to_string(fm.module_id) + ".mod");
  save_fmodule(path, fm);
  std::cout << "packaged module " << fm.module_id << " (" << name << ") into " << path.string()
            << "\n";
  return 0;
}

int cmd_pool(const std::string& key_path, std::size_t count, unsigned difficulty,
             const std::string& seed, const std::string& out) {
  LoadedKey key = load_key_file(key_path);
  auto modules = gen_crypto_modules(key.pk, count, difficulty, ByteView(to_bytes(seed)));
  save_pool_file(out, key.pk, modules);
  std::cout << "wrote " << modules.size() << " crypto modules (difficulty " << difficulty
            << ") to " << out << "\n";
  return 0;
}

int cmd_serve(const std::string& catalog_dir, const std::string& pool_path,
              const std::string& key_path, const std::string& listen, std::size_t chain_length,
              unsigned difficulty, const std::string& image_dir, std::uint64_t seed,
              std::uint64_t max_storage, const std::string& state_out, bool no_pad) {
  ChameleonKeyPair kp = require_trapdoor(load_key_file(key_path));
  ModuleCatalog catalog = load_catalog_dir(catalog_dir);
  std::vector<CryptoModule> modules = load_pool_file(pool_path, kp.pk);
  if (!modules.empty() && modules.front().difficulty != difficulty)
    throw Error("pool difficulty " + std::to_string(modules.front().difficulty) +
                " does not match --pow-difficulty " + std::to_string(difficulty));

  ServerOptions options;
  options.chain_length = chain_length;
  options.image_dir = image_dir.empty() ? std::filesystem::path("images")
                                        : std::filesystem::path(image_dir);
  options.seed = seed;
  options.pad_builds = !no_pad;
  if (max_storage > 0) options.max_storage_bytes = max_storage;

  DistributionServer server(kp, std::move(catalog), CryptoPool(std::move(modules)), options);
  if (!state_out.empty()) {
    DeviceState device =
        factory_init(DeviceState{}, server.active_checkpoint()->chain, difficulty);
    save_device_state(state_out, DeviceFile{kp.pk, device});
    std::cout << "wrote factory device state to " << state_out << "\n";
  }

  TcpServer tcp(server, listen);
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  tcp.start();
  std::cout << "serving on port " << tcp.port() << " (checkpoint "
            << server.active_checkpoint()->chain.checkpoint_id << "), ctrl-c to stop\n";
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  tcp.stop();
  std::cout << "served " << server.request_count() << " requests, " << server.hit_count()
            << " hits\n";
  return 0;
}

int cmd_verify(const std::string& state_path, const std::string& image_path,
               const std::string& branch) {
  DeviceFile dev = load_device_state(state_path);
  StreamVerifyResult result = stream_verify_image_file(dev.pk, dev.state, image_path, branch);
  if (!result.accepted) {
    std::cout << "REJECT " << image_path << "\n";
    return 1;
  }
  if (result.rotated) {
    save_device_state(state_path, DeviceFile{dev.pk, *result.rotated});
    std::cout << "ACCEPT " << image_path << " (chain rotated to "
              << result.rotated->chain.checkpoint_id << ")\n";
  } else {
    std::cout << "ACCEPT " << image_path << "\n";
  }
  return 0;
}

int cmd_request(const std::string& connect, const std::string& modules, const std::string& out) {
  auto colon = connect.rfind(':');
  if (colon == std::string::npos) throw Error("--connect must be host:port");
  WireResponse resp = send_wire_request(connect.substr(0, colon),
                                        static_cast<std::uint16_t>(
                                            std::stoi(connect.substr(colon + 1))),
                                        parse_id_list(modules));
  switch (resp.status) {
    case RequestStatus::ok:
      break;
    case RequestStatus::oversize:
      std::cout << "status: oversize request\n";
      return 1;
    case RequestStatus::unknown_module:
      std::cout << "status: unknown module\n";
      return 1;
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(resp.image.data()),
          static_cast<std::streamsize>(resp.image.size()));
  if (!f) throw Error("cannot write " + out);
  std::cout << (resp.hit ? "hit" : "miss") << ", image " << resp.image.size() << " bytes -> "
            << out << "\n";
  return 0;
}

int cmd_bench(const BenchConfig& config, const std::string& out, bool append) {
  BenchResult result = run_server_bench(config);
  if (!out.empty()) {
    if (append)
      append_metrics_csv(out, result.metrics);
    else
      write_metrics_csv(out, {result.metrics});
  }
  std::cout << metrics_text_report(config, result.metrics);
  return 0;
}

int cmd_attack(const AttackScenario& scenario, const std::string& out, bool append) {
  AttackReport report = run_attack_sim(scenario);
  if (!out.empty()) {
    if (append)
      append_attack_csv(out, report);
    else
      write_attack_csv(out, {report});
  }
  std::cout << attack_text_report(scenario, report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IMUP modular firmware update pipeline"};
  app.require_subcommand(1);

  // keygen
  unsigned kg_bits = 1024;
  std::string kg_seed, kg_out = "imup.key", kg_pub;
  auto* keygen_cmd = app.add_subcommand("keygen", "generate a chameleon hash keypair");
  keygen_cmd->add_option("--bits", kg_bits, "key size in bits");
  keygen_cmd->add_option("--seed", kg_seed, "deterministic seed")->required();
  keygen_cmd->add_option("--out", kg_out, "keypair file (includes trapdoor)");
  keygen_cmd->add_option("--public-out", kg_pub, "trapdoor-free key file");

  // package
  std::string pk_dir, pk_name, pk_kind = "binary", pk_payload;
  std::vector<std::string> pk_steps;
  std::vector<std::uint32_t> pk_deps;
  auto* package_cmd = app.add_subcommand("package", "add a functional module to a catalog");
  package_cmd->add_option("--catalog", pk_dir, "catalog directory")->required();
  package_cmd->add_option("--name", pk_name)->required();
  package_cmd->add_option("--kind", pk_kind)->check(CLI::IsMember({"script", "binary"}));
  package_cmd->add_option("--payload", pk_payload, "payload file");
  package_cmd->add_option("--step", pk_steps, "install step (repeatable)");
  package_cmd->add_option("--dep", pk_deps, "dependency module id (repeatable)");

  // pool
  std::string pl_key, pl_seed = "pool", pl_out = "pool.bin";
  std::size_t pl_count = 16;
  unsigned pl_diff = 0;
  auto* pool_cmd = app.add_subcommand("pool", "pregenerate crypto modules");
  pool_cmd->add_option("--key", pl_key)->required();
  pool_cmd->add_option("--count", pl_count);
  pool_cmd->add_option("--difficulty", pl_diff);
  pool_cmd->add_option("--seed", pl_seed);
  pool_cmd->add_option("--out", pl_out);

  // serve
  std::string sv_catalog, sv_pool, sv_key, sv_listen = "127.0.0.1:9190", sv_images, sv_state;
  std::size_t sv_len = 7;
  unsigned sv_diff = 0;
  std::uint64_t sv_seed = 1, sv_max_storage = 0;
  bool sv_no_pad = false;
  auto* serve_cmd = app.add_subcommand("serve", "run the distribution server");
  serve_cmd->add_option("--catalog", sv_catalog)->required();
  serve_cmd->add_option("--pool", sv_pool)->required();
  serve_cmd->add_option("--key", sv_key, "keypair file with trapdoor")->required();
  serve_cmd->add_option("--listen", sv_listen, "host:port");
  serve_cmd->add_option("--chain-length", sv_len);
  serve_cmd->add_option("--pow-difficulty", sv_diff);
  serve_cmd->add_option("--image-dir", sv_images);
  serve_cmd->add_option("--seed", sv_seed);
  serve_cmd->add_option("--max-storage", sv_max_storage, "bytes; prunes retired checkpoints");
  serve_cmd->add_option("--state-out", sv_state, "write a factory device state file");
  serve_cmd->add_flag("--no-pad", sv_no_pad, "build exactly the requested closure");

  // verify
  std::string vf_state, vf_image, vf_branch;
  auto* verify_cmd = app.add_subcommand("verify", "device-side image verification");
  verify_cmd->add_option("--state", vf_state)->required();
  verify_cmd->add_option("--image", vf_image)->required();
  verify_cmd->add_option("--branch", vf_branch)->check(CLI::IsMember({"functional", "security"}));

  // request
  std::string rq_connect, rq_modules, rq_out = "firmware.img";
  auto* request_cmd = app.add_subcommand("request", "fetch a customized image over tcp");
  request_cmd->add_option("--connect", rq_connect, "host:port")->required();
  request_cmd->add_option("--modules", rq_modules, "comma-separated module ids")->required();
  request_cmd->add_option("--out", rq_out);

  // bench
  BenchConfig bench_config;
  std::string bn_out, bn_dir;
  bool bn_append = false;
  auto* bench_cmd = app.add_subcommand("bench", "server throughput benchmark");
  bench_cmd->add_option("--modules", bench_config.workload.num_modules);
  bench_cmd->add_option("--requests", bench_config.workload.num_requests);
  bench_cmd->add_option("--chain-length", bench_config.chain_length);
  bench_cmd->add_option("--pow-difficulty", bench_config.pow_difficulty);
  bench_cmd->add_option("--zipf", bench_config.workload.zipf_exponent);
  bench_cmd->add_option("--seed", bench_config.workload.seed);
  bench_cmd->add_option("--min-modules", bench_config.workload.min_modules_per_request);
  bench_cmd->add_option("--max-modules", bench_config.workload.max_modules_per_request);
  bench_cmd->add_option("--key-bits", bench_config.key_bits);
  bench_cmd->add_option("--pool-size", bench_config.pool_size);
  bench_cmd->add_option("--out", bn_out, "metrics csv");
  bench_cmd->add_option("--work-dir", bn_dir);
  bench_cmd->add_flag("--append", bn_append, "append a row instead of rewriting");

  // attack-sim
  AttackScenario scenario;
  std::string at_out;
  bool at_append = false;
  auto* attack_cmd = app.add_subcommand("attack-sim", "key-exposure forgery simulation");
  attack_cmd->add_option("--key-bits", scenario.key_bits, "trapdoor width");
  attack_cmd->add_option("--exposed-frac", scenario.exposed_fraction);
  attack_cmd->add_option("--pow-difficulty", scenario.pow_difficulty);
  attack_cmd->add_option("--runs", scenario.trials);
  attack_cmd->add_option("--speedup", scenario.attacker_speedup);
  attack_cmd->add_option("--seed", scenario.seed);
  attack_cmd->add_option("--chain-length", scenario.chain_length);
  attack_cmd->add_flag("--analytic-only", scenario.analytic_only);
  attack_cmd->add_option("--out", at_out, "report csv");
  attack_cmd->add_flag("--append", at_append);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*keygen_cmd) return cmd_keygen(kg_bits, kg_seed, kg_out, kg_pub);
    if (*package_cmd) return cmd_package(pk_dir, pk_name, pk_kind, pk_payload, pk_steps, pk_deps);
    if (*pool_cmd) return cmd_pool(pl_key, pl_count, pl_diff, pl_seed, pl_out);
    if (*serve_cmd)
      return cmd_serve(sv_catalog, sv_pool, sv_key, sv_listen, sv_len, sv_diff, sv_images,
                       sv_seed, sv_max_storage, sv_state, sv_no_pad);
    if (*verify_cmd) return cmd_verify(vf_state, vf_image, vf_branch);
    if (*request_cmd) return cmd_request(rq_connect, rq_modules, rq_out);
    if (*bench_cmd) {
      if (bn_dir.empty())
        bn_dir = (std::filesystem::temp_directory_path() /
                  ("imup-bench-" + std::to_string(bench_config.workload.seed)))
                     .string();
      bench_config.work_dir = bn_dir;
      return cmd_bench(bench_config, bn_out, bn_append);
    }
    if (*attack_cmd) return cmd_attack(scenario, at_out, at_append);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
