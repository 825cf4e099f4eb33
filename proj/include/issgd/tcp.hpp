#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "issgd/store.hpp"

namespace issgd {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

// Parses "host:port".
Endpoint parse_endpoint(const std::string& text);

// Owning file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset();

  void send_all(std::span<const std::uint8_t> data);
  // Returns false on clean EOF before any byte was read.
  bool recv_exact(std::span<std::uint8_t> out);

 private:
  int fd_ = -1;
};

// Blocking TCP connection with Nagle disabled.
Socket connect_tcp(const Endpoint& endpoint);

// Reads one frame (header + payload) from the socket; nullopt on clean EOF.
std::optional<std::vector<std::uint8_t>> read_frame(Socket& sock, std::size_t max_payload);

// Serves the wire protocol for one WeightStore, one thread per connection.
class StoreServer {
 public:
  // port 0 binds an ephemeral port; see port().
  StoreServer(std::shared_ptr<WeightStore> store, std::uint16_t port, const std::string& bind_host = "127.0.0.1");
  ~StoreServer();
  StoreServer(const StoreServer&) = delete;
  StoreServer& operator=(const StoreServer&) = delete;

  std::uint16_t port() const { return port_; }
  void stop();

 private:
  void accept_loop();
  void serve(int fd);

  std::shared_ptr<WeightStore> store_;
  Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::vector<int> open_fds_;
  std::vector<std::thread> connections_;
  std::thread acceptor_;
};

// Blocking request/response client. Connects lazily and drops the connection on
// any I/O failure so the next call reconnects.
class TcpStoreClient final : public StoreClient {
 public:
  explicit TcpStoreClient(Endpoint endpoint);

  void put_params(const ParamsSnapshot& snapshot) override;
  std::optional<ParamsSnapshot> get_params() override;
  void put_weights(std::uint64_t param_version, std::span<const IndexWeight> entries) override;
  std::vector<WeightEntry> get_weights(const WeightFilter& filter) override;
  void put_worker_status(const WorkerStatus& status) override;
  std::vector<WorkerStatus> get_worker_status() override;

 private:
  wire::Message call(const wire::Message& request);
  void connect();

  Endpoint endpoint_;
  Socket sock_;
};

}  // namespace issgd
