#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <thread>

#include "cst/cluster.hpp"
#include "cst/error.hpp"
#include "cst/wire.hpp"

namespace cst::cluster {

namespace {

void write_all(int fd, const wire::Bytes& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t k = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (k < 0 && errno == EINTR) continue;
    require(k > 0, Errc::site_unreachable, std::string("send failed: ") + std::strerror(errno));
    sent += static_cast<std::size_t>(k);
  }
}

// Returns false on orderly EOF before any byte was read.
bool read_all(int fd, std::uint8_t* out, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    const ssize_t k = ::recv(fd, out + got, len - got, 0);
    if (k < 0 && errno == EINTR) continue;
    if (k == 0 && got == 0) return false;
    require(k > 0, Errc::site_unreachable, "connection closed mid-frame");
    got += static_cast<std::size_t>(k);
  }
  return true;
}

void write_frame(int fd, wire::Tag tag, wire::Bytes payload) {
  write_all(fd, wire::encode_frame({tag, std::move(payload)}));
}

std::optional<wire::Frame> read_frame(int fd) {
  std::uint8_t header[wire::kHeaderSize];
  if (!read_all(fd, header, sizeof header)) return std::nullopt;
  const auto [tag, len] = wire::decode_header(header);
  require(len < (std::uint64_t{1} << 34), Errc::protocol_error, "frame too large");
  wire::Frame frame{tag, wire::Bytes(static_cast<std::size_t>(len))};
  if (len > 0) require(read_all(fd, frame.payload.data(), frame.payload.size()), Errc::site_unreachable,
                       "connection closed mid-frame");
  return frame;
}

wire::Frame expect_frame(int fd, wire::Tag tag) {
  auto frame = read_frame(fd);
  require(frame.has_value(), Errc::site_unreachable, "site closed the connection");
  require(frame->tag == tag, Errc::protocol_error, "unexpected reply tag");
  return std::move(*frame);
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

SocketChannel::SocketChannel(const std::string& host, std::uint16_t port, int site_id) : site_id_(site_id) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  require(::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) == 0, Errc::site_unreachable,
          "cannot resolve " + host);

  // Remote sites may still be starting; retry for a few seconds.
  for (int attempt = 0; attempt < 50 && fd_ < 0; ++attempt) {
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
        fd_ = fd;
        break;
      }
      ::close(fd);
    }
    if (fd_ < 0) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  ::freeaddrinfo(res);
  require(fd_ >= 0, Errc::site_unreachable, "cannot connect to " + host + ":" + service);
  set_nodelay(fd_);

  // An empty variance request returns just n_k; used once to learn the site size.
  write_frame(fd_, wire::Tag::variance_request, {});
  const auto reply = expect_frame(fd_, wire::Tag::variance_reply);
  n_ = static_cast<Index>(wire::decode_variance(reply.payload, 0).n);
}

SocketChannel::~SocketChannel() {
  if (fd_ >= 0) ::close(fd_);
}

void SocketChannel::send_params(const Vec& beta) {
  write_frame(fd_, wire::Tag::param_broadcast, wire::encode_vector(beta));
}

Vec SocketChannel::receive_gradient() {
  return wire::decode_vector(expect_frame(fd_, wire::Tag::gradient_reply).payload);
}

void SocketChannel::send_variance_request(const IndexList& idx) {
  pending_q_ = static_cast<Index>(idx.size());
  write_frame(fd_, wire::Tag::variance_request, wire::encode_indices(idx));
}

VarianceBlock SocketChannel::receive_variance() {
  const auto payload = wire::decode_variance(expect_frame(fd_, wire::Tag::variance_reply).payload, pending_q_);
  VarianceBlock out;
  out.site_id = site_id_;
  out.n = static_cast<Index>(payload.n);
  out.hessian = payload.hessian;
  out.score_cov = payload.score_cov;
  return out;
}

void SocketChannel::shutdown() {
  if (fd_ < 0) return;
  try {
    write_frame(fd_, wire::Tag::shutdown, {});
  } catch (const Error&) {
  }
  ::close(fd_);
  fd_ = -1;
}

SiteServer::SiteServer(SiteWorker worker, std::uint16_t port, const std::string& host)
    : worker_(std::move(worker)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  require(listen_fd_ >= 0, Errc::io_error, "cannot create socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  require(::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1, Errc::invalid_config,
          "bind address must be dotted IPv4: " + host);
  require(::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0, Errc::io_error,
          std::string("bind failed: ") + std::strerror(errno));
  require(::listen(listen_fd_, 1) == 0, Errc::io_error, "listen failed");
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

SiteServer::~SiteServer() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void SiteServer::serve_one() {
  const int fd = ::accept(listen_fd_, nullptr, nullptr);
  require(fd >= 0, Errc::io_error, "accept failed");
  set_nodelay(fd);
  try {
    while (auto frame = read_frame(fd)) {
      switch (frame->tag) {
        case wire::Tag::param_broadcast: {
          const Vec g = worker_.on_params(wire::decode_vector(frame->payload));
          write_frame(fd, wire::Tag::gradient_reply, wire::encode_vector(g));
          break;
        }
        case wire::Tag::variance_request: {
          const IndexList idx = wire::decode_indices(frame->payload);
          wire::VariancePayload reply;
          reply.n = static_cast<std::uint64_t>(worker_.n());
          if (!idx.empty()) {
            VarianceBlock block = worker_.on_variance_request(idx);
            reply.hessian = std::move(block.hessian);
            reply.score_cov = std::move(block.score_cov);
          }
          write_frame(fd, wire::Tag::variance_reply, wire::encode_variance(reply));
          break;
        }
        case wire::Tag::shutdown:
          ::close(fd);
          return;
        default:
          fail(Errc::protocol_error, "site received a reply-only tag");
      }
    }
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

}  // namespace cst::cluster
