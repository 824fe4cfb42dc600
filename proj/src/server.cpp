#include "imup/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>

namespace imup {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<FunctionalModule> baseline_modules(const ModuleCatalog& catalog,
                                               const std::vector<std::uint32_t>& ids,
                                               std::size_t chain_length) {
  std::vector<std::uint32_t> chosen = ids;
  if (chosen.empty()) {
    for (std::uint32_t id : catalog.popularity_rank()) {
      if (chosen.size() == chain_length) break;
      chosen.push_back(id);
    }
  }
  if (chosen.size() != chain_length)
    throw Error("baseline needs exactly " + std::to_string(chain_length) + " modules");
  std::vector<FunctionalModule> out;
  out.reserve(chosen.size());
  for (std::uint32_t id : chosen) out.push_back(catalog.get(id));
  return out;
}

}  // namespace

DistributionServer::DistributionServer(ChameleonKeyPair kp, ModuleCatalog catalog,
                                       CryptoPool pool, ServerOptions options)
    : kp_(std::move(kp)),
      catalog_(std::move(catalog)),
      pool_(std::move(pool)),
      options_(std::move(options)),
      rng_(Drbg(options_.seed).child("server")) {
  if (catalog_.size() < options_.chain_length)
    throw Error("catalog smaller than chain length");
  if (options_.image_dir.empty()) throw Error("image_dir required");
  std::filesystem::create_directories(options_.image_dir);

  auto start = Clock::now();
  auto ckpt = std::make_shared<Checkpoint>(
      init_firmware(kp_, pool_, baseline_modules(catalog_, {}, options_.chain_length), rng_));
  checkpoint_build_s_ = seconds_since(start);
  pow_difficulty_ = ckpt->image.difficulty;
  std::filesystem::path path = options_.image_dir / (ckpt->image.version_id + ".img");
  save_image(path, kp_.pk, ckpt->image);
  checkpoint_storage_ += std::filesystem::file_size(path);
  active_ = std::move(ckpt);
}

std::string DistributionServer::flight_key(const std::set<std::uint32_t>& closure) const {
  std::string key;
  for (std::uint32_t id : closure) key += std::to_string(id) + ",";
  return key;
}

std::shared_ptr<CacheEntry> DistributionServer::lookup_locked(
    const std::set<std::uint32_t>& closure) const {
  // Smallest containing module set wins; image id breaks ties.
  std::shared_ptr<CacheEntry> best;
  for (const auto& entry : entries_) {
    if (entry->retired || entry->checkpoint_id != active_->chain.checkpoint_id) continue;
    if (entry->module_set.size() < closure.size()) continue;
    if (!std::includes(entry->module_set.begin(), entry->module_set.end(), closure.begin(),
                       closure.end()))
      continue;
    if (!best || entry->module_set.size() < best->module_set.size() ||
        (entry->module_set.size() == best->module_set.size() && entry->image_id < best->image_id))
      best = entry;
  }
  return best;
}

std::set<std::uint32_t> DistributionServer::pad_module_set(std::set<std::uint32_t> closure) const {
  for (std::uint32_t candidate : catalog_.popularity_rank()) {
    if (closure.size() >= options_.chain_length) break;
    if (closure.count(candidate)) continue;
    std::set<std::uint32_t> trial = closure;
    trial.insert(candidate);
    trial = catalog_.closure(trial);
    if (trial.size() <= options_.chain_length) closure = std::move(trial);
  }
  return closure;
}

std::shared_ptr<CacheEntry> DistributionServer::record_image(const FirmwareImage& image,
                                                             const std::string& checkpoint_id) {
  auto entry = std::make_shared<CacheEntry>();
  entry->image_id = image.version_id;
  entry->module_set = image.module_set();
  entry->checkpoint_id = checkpoint_id;
  entry->path = options_.image_dir / (image.version_id + ".img");
  return entry;
}

HandleResult DistributionServer::handle_request(const std::set<std::uint32_t>& requested) {
  auto serve_start = Clock::now();
  HandleResult result;

  std::set<std::uint32_t> closure;
  try {
    closure = catalog_.closure(requested);
  } catch (const Error&) {
    rejected_.fetch_add(1);
    result.status = RequestStatus::unknown_module;
    return result;
  }
  if (closure.size() > options_.chain_length) {
    rejected_.fetch_add(1);
    result.status = RequestStatus::oversize;
    return result;
  }

  auto finish = [&](const std::shared_ptr<CacheEntry>& entry, bool hit) {
    requests_.fetch_add(1);
    if (hit)
      hits_.fetch_add(1);
    else
      builds_.fetch_add(1);
    result.hit = hit;
    result.image_id = entry->image_id;
    result.image_path = entry->path;
    serve_ns_.fetch_add(
        static_cast<std::uint64_t>(seconds_since(serve_start) * 1e9));
  };

  {
    auto search_start = Clock::now();
    std::shared_lock lock(mu_);
    auto entry = lookup_locked(closure);
    search_ns_.fetch_add(static_cast<std::uint64_t>(seconds_since(search_start) * 1e9));
    searches_.fetch_add(1);
    if (entry) {
      // Hits run under the shared lock; last_access needs an atomic view.
      std::atomic_ref<std::uint64_t>(entry->last_access)
          .store(access_clock_.fetch_add(1) + 1, std::memory_order_relaxed);
      lock.unlock();
      finish(entry, true);
      return result;
    }
  }

  // Coalesce concurrent misses into one build, keyed by the padded set so
  // distinct requests converging on one image share a single flight.
  std::set<std::uint32_t> final_set = options_.pad_builds ? pad_module_set(closure) : closure;
  std::string key = flight_key(final_set);
  std::shared_future<BuildOutcome> future;
  bool leader = false;
  std::promise<BuildOutcome> promise;
  {
    std::scoped_lock flight_lock(flight_mu_);
    auto it = flights_.find(key);
    if (it != flights_.end()) {
      future = it->second;
    } else {
      future = promise.get_future().share();
      flights_.emplace(key, future);
      leader = true;
    }
  }

  if (!leader) {
    BuildOutcome outcome = future.get();
    finish(outcome.entry, true);
    return result;
  }

  BuildOutcome outcome;
  bool reused_existing = false;
  try {
    auto build_start = Clock::now();
    std::shared_ptr<const Checkpoint> ckpt;
    {
      std::shared_lock lock(mu_);
      ckpt = active_;
      // A racing miss may have landed a usable entry between our lookup and
      // taking flight leadership.
      if (auto entry = lookup_locked(closure)) {
        lock.unlock();
        std::scoped_lock flight_lock(flight_mu_);
        flights_.erase(key);
        promise.set_value(BuildOutcome{entry, 0});
        finish(entry, true);
        return result;
      }
    }
    FirmwareImage image = iterate_version(kp_, *ckpt, final_set, catalog_);
    auto entry = record_image(image, ckpt->chain.checkpoint_id);
    outcome.build_seconds = seconds_since(build_start);
    {
      std::unique_lock lock(mu_);
      // Distinct closures can pad to one image; keep a single entry per id.
      for (const auto& existing : entries_) {
        if (existing->image_id == entry->image_id && !existing->retired) {
          entry = existing;
          reused_existing = true;
          break;
        }
      }
      if (!reused_existing) {
        save_image(entry->path, kp_.pk, image);
        entry->size_bytes = std::filesystem::file_size(entry->path);
        entry->retired = ckpt->chain.checkpoint_id != active_->chain.checkpoint_id;
        entry->last_access = access_clock_.fetch_add(1) + 1;
        entries_.push_back(entry);
        prune_locked();
      }
    }
    outcome.entry = entry;
    if (!reused_existing)
      build_ns_.fetch_add(static_cast<std::uint64_t>(outcome.build_seconds * 1e9));
  } catch (...) {
    std::scoped_lock flight_lock(flight_mu_);
    flights_.erase(key);
    promise.set_exception(std::current_exception());
    throw;
  }

  {
    std::scoped_lock flight_lock(flight_mu_);
    flights_.erase(key);
  }
  promise.set_value(outcome);
  finish(outcome.entry, reused_existing);
  return result;
}

const FirmwareImage& DistributionServer::checkpoint_rollover(
    std::vector<std::uint32_t> baseline) {
  std::unique_lock lock(mu_);
  auto next = std::make_shared<Checkpoint>(
      security_update(kp_, *active_, pool_,
                      baseline_modules(catalog_, baseline, options_.chain_length), rng_));
  std::filesystem::path path = options_.image_dir / (next->image.version_id + ".img");
  save_image(path, kp_.pk, next->image);
  checkpoint_storage_ += std::filesystem::file_size(path);
  for (auto& entry : entries_) entry->retired = true;
  last_security_image_ = next->image;
  active_ = std::move(next);
  prune_locked();
  return last_security_image_;
}

void DistributionServer::prune_locked() {
  if (!options_.max_storage_bytes) return;
  auto total = [&] {
    std::uint64_t sum = checkpoint_storage_;
    for (const auto& e : entries_) sum += e->size_bytes;
    return sum;
  };
  while (total() > *options_.max_storage_bytes) {
    // Oldest retired entry goes first; active-checkpoint images are kept.
    auto victim = entries_.end();
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
      if (!(*it)->retired) continue;
      if (victim == entries_.end() || (*it)->last_access < (*victim)->last_access) victim = it;
    }
    if (victim == entries_.end()) return;
    std::error_code ec;
    std::filesystem::remove((*victim)->path, ec);
    entries_.erase(victim);
  }
}

ServerMetrics DistributionServer::metrics() const {
  ServerMetrics m;
  std::uint64_t requests = requests_.load();
  std::uint64_t hits = hits_.load();
  std::uint64_t builds = builds_.load();
  m.total_time_s = static_cast<double>(serve_ns_.load()) / 1e9;
  m.hit_rate_pct = requests == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / requests;
  m.firmware_count = builds;
  m.storage_bytes = storage_bytes();
  m.preparation_time_s = preparation_time_s_;
  m.first_processing_time_s = preparation_time_s_ + checkpoint_build_s_;
  m.subsequent_processing_time_s =
      builds == 0 ? 0.0 : static_cast<double>(build_ns_.load()) / 1e9 / builds;
  std::uint64_t searches = searches_.load();
  m.avg_search_time_ms =
      searches == 0 ? 0.0 : static_cast<double>(search_ns_.load()) / 1e6 / searches;
  return m;
}

std::shared_ptr<const Checkpoint> DistributionServer::active_checkpoint() const {
  std::shared_lock lock(mu_);
  return active_;
}

const FirmwareImage& DistributionServer::last_security_image() const {
  std::shared_lock lock(mu_);
  if (last_security_image_.blocks.empty()) throw Error("no rollover has happened yet");
  return last_security_image_;
}

std::uint64_t DistributionServer::storage_bytes() const {
  std::shared_lock lock(mu_);
  std::uint64_t sum = checkpoint_storage_;
  for (const auto& e : entries_) sum += e->size_bytes;
  return sum;
}

std::vector<CacheEntry> DistributionServer::entries_snapshot() const {
  std::shared_lock lock(mu_);
  std::vector<CacheEntry> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(*e);
  return out;
}

namespace {
constexpr std::string_view kReqMagic = "IMUPREQ1";
constexpr std::string_view kRspMagic = "IMUPRSP1";
}  // namespace

Bytes encode_wire_request(const std::set<std::uint32_t>& ids) {
  Bytes out;
  put_bytes(out, to_bytes(kReqMagic));
  put_u16be(out, static_cast<std::uint16_t>(ids.size()));
  for (std::uint32_t id : ids) put_u32be(out, id);  // std::set iterates sorted
  return out;
}

Bytes encode_wire_response(const WireResponse& resp) {
  Bytes out;
  put_bytes(out, to_bytes(kRspMagic));
  put_u8(out, static_cast<std::uint8_t>(resp.status));
  put_u8(out, resp.hit ? 1 : 0);
  put_u64be(out, resp.image.size());
  put_bytes(out, ByteView(resp.image));
  return out;
}

WireResponse parse_wire_response(ByteView data) {
  ByteReader r{data};
  r.expect_magic(kRspMagic);
  WireResponse resp;
  std::uint8_t status = r.u8();
  if (status > 2) throw Error("bad wire status");
  resp.status = static_cast<RequestStatus>(status);
  resp.hit = r.u8() != 0;
  std::uint64_t len = r.u64be();
  resp.image = r.take(len);
  if (!r.done()) throw Error("trailing bytes after wire response");
  return resp;
}

namespace {

bool read_exact_fd(int fd, std::uint8_t* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    ssize_t k = ::read(fd, buf + got, n - got);
    if (k <= 0) return false;
    got += static_cast<std::size_t>(k);
  }
  return true;
}

bool write_all_fd(int fd, const std::uint8_t* buf, std::size_t n) {
  std::size_t sent = 0;
  while (sent < n) {
    ssize_t k = ::write(fd, buf + sent, n - sent);
    if (k <= 0) return false;
    sent += static_cast<std::size_t>(k);
  }
  return true;
}

Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return Bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TcpServer::TcpServer(DistributionServer& server, const std::string& listen_addr)
    : server_(server) {
  auto colon = listen_addr.rfind(':');
  if (colon == std::string::npos) throw Error("listen address must be host:port");
  std::string host = listen_addr.substr(0, colon);
  int port = std::stoi(listen_addr.substr(colon + 1));

  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error("socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw Error("listen host must be a numeric IPv4 address");
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw Error("bind failed on " + listen_addr);
  if (::listen(listen_fd_, 64) != 0) throw Error("listen failed");

  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::start() {
  acceptor_ = std::thread([this] { accept_loop(); });
}

void TcpServer::accept_loop() {
  for (;;) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) return;  // listen socket closed
    std::scoped_lock lock(conn_mu_);
    if (stopping_.load()) {
      ::close(fd);
      return;
    }
    connections_.emplace_back([this, fd] {
      std::uint8_t header[10];
      while (read_exact_fd(fd, header, sizeof header)) {
        WireResponse resp;
        if (!std::equal(kReqMagic.begin(), kReqMagic.end(), header)) break;
        std::uint16_t count = static_cast<std::uint16_t>(header[8] << 8 | header[9]);
        Bytes idbuf(static_cast<std::size_t>(count) * 4);
        if (count > 0 && !read_exact_fd(fd, idbuf.data(), idbuf.size())) break;
        std::set<std::uint32_t> ids;
        for (std::uint16_t i = 0; i < count; ++i) {
          std::uint32_t id = 0;
          for (int b = 0; b < 4; ++b) id = id << 8 | idbuf[i * 4 + b];
          ids.insert(id);
        }
        HandleResult handled = server_.handle_request(ids);
        resp.status = handled.status;
        resp.hit = handled.hit;
        if (handled.status == RequestStatus::ok)
          resp.image = read_file_bytes(handled.image_path);
        Bytes frame = encode_wire_response(resp);
        if (!write_all_fd(fd, frame.data(), frame.size())) break;
      }
      ::close(fd);
    });
  }
}

void TcpServer::stop() {
  bool expected = false;
  if (!stopping_.compare_exchange_strong(expected, true)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (acceptor_.joinable()) acceptor_.join();
  std::scoped_lock lock(conn_mu_);
  for (auto& t : connections_)
    if (t.joinable()) t.join();
  connections_.clear();
}

WireResponse send_wire_request(const std::string& host, std::uint16_t port,
                               const std::set<std::uint32_t>& ids) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw Error("host must be a numeric IPv4 address");
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    throw Error("connect failed");
  }
  Bytes frame = encode_wire_request(ids);
  if (!write_all_fd(fd, frame.data(), frame.size())) {
    ::close(fd);
    throw Error("request write failed");
  }
  std::uint8_t head[18];
  if (!read_exact_fd(fd, head, sizeof head)) {
    ::close(fd);
    throw Error("response header read failed");
  }
  std::uint64_t len = 0;
  for (int i = 10; i < 18; ++i) len = len << 8 | head[i];
  Bytes body(len);
  if (len > 0 && !read_exact_fd(fd, body.data(), body.size())) {
    ::close(fd);
    throw Error("response body read failed");
  }
  ::close(fd);
  Bytes full(head, head + sizeof head);
  put_bytes(full, ByteView(body));
  return parse_wire_response(ByteView(full));
}

}  // namespace imup
