#pragma once

#include <atomic>
#include <future>
#include <memory>
#include <shared_mutex>
#include <thread>

#include "imup/device.hpp"
#include "imup/pipeline.hpp"

namespace imup {

enum class RequestStatus : std::uint8_t { ok = 0, oversize = 1, unknown_module = 2 };

struct ServerMetrics {
  double total_time_s = 0;
  double hit_rate_pct = 0;
  std::uint64_t firmware_count = 0;
  std::uint64_t storage_bytes = 0;
  double preparation_time_s = 0;
  double first_processing_time_s = 0;
  double subsequent_processing_time_s = 0;
  double avg_search_time_ms = 0;
};

struct HandleResult {
  RequestStatus status = RequestStatus::ok;
  bool hit = false;
  std::string image_id;
  std::filesystem::path image_path;
};

struct CacheEntry {
  std::string image_id;
  std::set<std::uint32_t> module_set;
  std::string checkpoint_id;
  std::uint64_t size_bytes = 0;
  std::filesystem::path path;
  std::uint64_t last_access = 0;
  bool retired = false;
};

struct ServerOptions {
  std::size_t chain_length = 7;
  std::filesystem::path image_dir;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> max_storage_bytes;  // prunes retired checkpoints only
  // Fill free slots of built images with the most popular absent modules;
  // raises reuse the way the paper's flexible module selection describes.
  bool pad_builds = true;
};

// Distribution front end: serve a cached superset image when one exists
// under the active checkpoint, otherwise build one variant and remember it.
class DistributionServer {
 public:
  DistributionServer(ChameleonKeyPair kp, ModuleCatalog catalog, CryptoPool pool,
                     ServerOptions options);

  HandleResult handle_request(const std::set<std::uint32_t>& requested);

  // Rollover: new security checkpoint (default baseline: most popular L
  // modules); prior cache entries stop matching but stay on disk.
  const FirmwareImage& checkpoint_rollover(std::vector<std::uint32_t> baseline = {});

  ServerMetrics metrics() const;

  std::shared_ptr<const Checkpoint> active_checkpoint() const;
  const FirmwareImage& last_security_image() const;
  const ModuleCatalog& catalog() const { return catalog_; }
  const ChameleonPublicKey& pk() const { return kp_.pk; }
  std::size_t chain_length() const { return options_.chain_length; }
  unsigned pow_difficulty() const { return pow_difficulty_; }

  void set_preparation_time(double seconds) { preparation_time_s_ = seconds; }

  std::uint64_t request_count() const { return requests_.load(); }
  std::uint64_t hit_count() const { return hits_.load(); }
  std::uint64_t build_count() const { return builds_.load(); }
  std::uint64_t storage_bytes() const;
  std::vector<CacheEntry> entries_snapshot() const;

 private:
  struct BuildOutcome {
    std::shared_ptr<CacheEntry> entry;
    double build_seconds = 0;
  };

  std::shared_ptr<CacheEntry> lookup_locked(const std::set<std::uint32_t>& closure) const;
  std::set<std::uint32_t> pad_module_set(std::set<std::uint32_t> closure) const;
  std::shared_ptr<CacheEntry> record_image(const FirmwareImage& image,
                                           const std::string& checkpoint_id);
  void prune_locked();
  std::string flight_key(const std::set<std::uint32_t>& closure) const;

  ChameleonKeyPair kp_;
  ModuleCatalog catalog_;
  CryptoPool pool_;
  ServerOptions options_;
  unsigned pow_difficulty_ = 0;
  Drbg rng_;

  mutable std::shared_mutex mu_;  // cache entries + active checkpoint
  std::shared_ptr<const Checkpoint> active_;
  FirmwareImage last_security_image_;
  std::vector<std::shared_ptr<CacheEntry>> entries_;
  std::atomic<std::uint64_t> access_clock_{0};
  std::uint64_t checkpoint_storage_ = 0;  // checkpoint/security image files

  std::mutex flight_mu_;
  std::map<std::string, std::shared_future<BuildOutcome>> flights_;

  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> builds_{0};
  std::atomic<std::uint64_t> rejected_{0};
  std::atomic<std::uint64_t> serve_ns_{0};
  std::atomic<std::uint64_t> search_ns_{0};
  std::atomic<std::uint64_t> searches_{0};
  std::atomic<std::uint64_t> build_ns_{0};
  double preparation_time_s_ = 0;
  double checkpoint_build_s_ = 0;
};

// Stream framing: "IMUPREQ1" count(2BE) ids(4BE each, sorted);
// "IMUPRSP1" status(1) hit(1) length(8BE) image bytes.
Bytes encode_wire_request(const std::set<std::uint32_t>& ids);

struct WireResponse {
  RequestStatus status = RequestStatus::ok;
  bool hit = false;
  Bytes image;
};
Bytes encode_wire_response(const WireResponse& resp);
WireResponse parse_wire_response(ByteView data);

// Minimal TCP front end; one thread per connection, multiple requests per
// connection until the peer closes.
class TcpServer {
 public:
  TcpServer(DistributionServer& server, const std::string& listen_addr);
  ~TcpServer();
  void start();
  void stop();
  std::uint16_t port() const { return port_; }

 private:
  void accept_loop();
  DistributionServer& server_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::thread acceptor_;
  std::mutex conn_mu_;
  std::vector<std::thread> connections_;
  std::atomic<bool> stopping_{false};
};

// Blocking client helper for tools and tests.
WireResponse send_wire_request(const std::string& host, std::uint16_t port,
                               const std::set<std::uint32_t>& ids);

}  // namespace imup
