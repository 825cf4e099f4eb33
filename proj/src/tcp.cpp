#include "issgd/tcp.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace issgd {

namespace {

constexpr std::size_t kMaxPayload = std::size_t{1} << 31;

std::string errno_text() { return std::strerror(errno); }

template <typename Reply>
Reply expect_reply(wire::Message msg, wire::Kind request) {
  if (auto* r = std::get_if<Reply>(&msg)) return std::move(*r);
  throw IoError(fmt::format("unexpected reply kind 0x{:02x} to request 0x{:02x}",
                            static_cast<int>(wire::kind_of(msg)), static_cast<int>(request)));
}

}  // namespace

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size()) {
    throw std::invalid_argument(fmt::format("endpoint '{}' is not host:port", text));
  }
  Endpoint ep;
  ep.host = colon == 0 ? "127.0.0.1" : text.substr(0, colon);
  const std::string port_text = text.substr(colon + 1);
  std::size_t used = 0;
  unsigned long port = 0;
  try {
    port = std::stoul(port_text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != port_text.size() || port > 65535) {
    throw std::invalid_argument(fmt::format("endpoint '{}' has an invalid port", text));
  }
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    reset();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

void Socket::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::send_all(std::span<const std::uint8_t> data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("send: " + errno_text());
    }
    sent += static_cast<std::size_t>(n);
  }
}

bool Socket::recv_exact(std::span<std::uint8_t> out) {
  std::size_t got = 0;
  while (got < out.size()) {
    const ssize_t n = ::recv(fd_, out.data() + got, out.size() - got, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("recv: " + errno_text());
    }
    if (n == 0) {
      if (got == 0) return false;
      throw IoError(fmt::format("connection closed after {} of {} bytes", got, out.size()));
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

std::optional<std::vector<std::uint8_t>> read_frame(Socket& sock, std::size_t max_payload) {
  std::vector<std::uint8_t> frame(wire::kHeaderSize);
  if (!sock.recv_exact(frame)) return std::nullopt;
  const auto header = wire::decode_header(frame);
  if (header.payload_len > max_payload) {
    throw wire::ProtocolError(2, fmt::format("payload of {} bytes exceeds limit", header.payload_len));
  }
  frame.resize(wire::kHeaderSize + header.payload_len);
  if (header.payload_len > 0 &&
      !sock.recv_exact(std::span<std::uint8_t>(frame).subspan(wire::kHeaderSize))) {
    throw IoError("connection closed inside a frame");
  }
  return frame;
}

StoreServer::StoreServer(std::shared_ptr<WeightStore> store, std::uint16_t port, const std::string& bind_host)
    : store_(std::move(store)) {
  Socket listener(::socket(AF_INET, SOCK_STREAM, 0));
  if (!listener.valid()) throw IoError("socket: " + errno_text());
  int one = 1;
  ::setsockopt(listener.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1) {
    throw IoError(fmt::format("cannot bind to '{}': not an IPv4 address", bind_host));
  }
  if (::bind(listener.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    throw IoError(fmt::format("bind {}:{}: {}", bind_host, port, errno_text()));
  }
  if (::listen(listener.fd(), 64) < 0) throw IoError("listen: " + errno_text());
  socklen_t len = sizeof(addr);
  ::getsockname(listener.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  listener_ = std::move(listener);
  acceptor_ = std::thread([this] { accept_loop(); });
  spdlog::debug("store listening on {}:{}", bind_host, port_);
}

StoreServer::~StoreServer() { stop(); }

void StoreServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listener_.fd(), SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> connections;
  {
    std::lock_guard lock(mu_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
    connections.swap(connections_);
  }
  for (auto& t : connections) t.join();
  listener_.reset();
}

void StoreServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listener_.fd(), nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      if (!stopping_) spdlog::warn("accept: {}", errno_text());
      return;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(mu_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    open_fds_.push_back(fd);
    connections_.emplace_back([this, fd] { serve(fd); });
  }
}

void StoreServer::serve(int fd) {
  Socket sock(fd);
  try {
    while (!stopping_) {
      std::optional<std::vector<std::uint8_t>> frame;
      try {
        frame = read_frame(sock, kMaxPayload);
        if (!frame) break;
        const auto reply = handle_request(*store_, wire::decode(*frame));
        sock.send_all(wire::encode(reply));
      } catch (const wire::ProtocolError& e) {
        // The stream may be out of sync; report and hang up.
        sock.send_all(wire::encode(wire::ErrorReply{ErrorCode::bad_request, e.what()}));
        break;
      }
    }
  } catch (const IoError& e) {
    if (!stopping_) spdlog::debug("store connection dropped: {}", e.what());
  } catch (const std::exception& e) {
    spdlog::error("store connection failed: {}", e.what());
  }
  std::lock_guard lock(mu_);
  open_fds_.erase(std::remove(open_fds_.begin(), open_fds_.end(), fd), open_fds_.end());
  // sock closes here, after the fd left open_fds_, so stop() never touches a reused descriptor.
}

TcpStoreClient::TcpStoreClient(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}

Socket connect_tcp(const Endpoint& endpoint) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  const std::string port = std::to_string(endpoint.port);
  if (int rc = ::getaddrinfo(endpoint.host.c_str(), port.c_str(), &hints, &found); rc != 0) {
    throw IoError(fmt::format("resolve {}: {}", endpoint.host, ::gai_strerror(rc)));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(found, &::freeaddrinfo);
  Socket sock(::socket(found->ai_family, found->ai_socktype, found->ai_protocol));
  if (!sock.valid()) throw IoError("socket: " + errno_text());
  if (::connect(sock.fd(), found->ai_addr, found->ai_addrlen) < 0) {
    throw IoError(fmt::format("connect {}:{}: {}", endpoint.host, endpoint.port, errno_text()));
  }
  int one = 1;
  ::setsockopt(sock.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return sock;
}

void TcpStoreClient::connect() { sock_ = connect_tcp(endpoint_); }

wire::Message TcpStoreClient::call(const wire::Message& request) {
  const auto bytes = wire::encode(request);
  wire::Message reply;
  try {
    if (!sock_.valid()) connect();
    sock_.send_all(bytes);
    auto frame = read_frame(sock_, kMaxPayload);
    if (!frame) throw IoError("store closed the connection");
    reply = wire::decode(*frame);
  } catch (const IoError&) {
    sock_.reset();
    throw;
  } catch (const wire::ProtocolError&) {
    sock_.reset();
    throw;
  }
  if (auto* err = std::get_if<wire::ErrorReply>(&reply)) throw StoreError(err->code, err->text);
  return reply;
}

void TcpStoreClient::put_params(const ParamsSnapshot& snapshot) {
  expect_reply<wire::Ack>(call(wire::PutParams{snapshot}), wire::Kind::put_params);
}

std::optional<ParamsSnapshot> TcpStoreClient::get_params() {
  return expect_reply<wire::ParamsReply>(call(wire::GetParams{}), wire::Kind::get_params).params;
}

void TcpStoreClient::put_weights(std::uint64_t param_version, std::span<const IndexWeight> entries) {
  wire::PutWeights msg{param_version, {entries.begin(), entries.end()}};
  expect_reply<wire::Ack>(call(msg), wire::Kind::put_weights);
}

std::vector<WeightEntry> TcpStoreClient::get_weights(const WeightFilter& filter) {
  return expect_reply<wire::WeightsReply>(call(wire::GetWeights{filter}), wire::Kind::get_weights).entries;
}

void TcpStoreClient::put_worker_status(const WorkerStatus& status) {
  expect_reply<wire::Ack>(call(wire::PutWorkerStatus{status}), wire::Kind::put_worker_status);
}

std::vector<WorkerStatus> TcpStoreClient::get_worker_status() {
  return expect_reply<wire::WorkerStatusReply>(call(wire::GetWorkerStatus{}), wire::Kind::get_worker_status)
      .statuses;
}

}  // namespace issgd
