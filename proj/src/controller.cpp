#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <system_error>

#include <fmt/format.h>

#include "pwrdist/netproto.hpp"
#include "text_util.hpp"

namespace pwrdist::net {

ControllerCore::ControllerCore(PowerDistributor engine, LogSink log)
    : engine_(std::move(engine)), log_(std::move(log)) {}

void ControllerCore::log(const std::string& line) const {
  if (log_) log_(line);
}

void ControllerCore::register_node(NodeId node, const std::string& address) {
  if (node < 1 || node > static_cast<NodeId>(engine_.node_count()))
    throw std::out_of_range(fmt::format("node id {} outside 1..{}", node, engine_.node_count()));
  split_address(address);
  addresses_[node] = address;
}

void ControllerCore::load_address_map(std::string_view text) {
  std::size_t line_no = 0;
  for (std::string_view raw : detail::split_lines(text)) {
    ++line_no;
    auto tok = detail::tokenize(detail::strip_comment(raw));
    if (tok.empty()) continue;
    if (tok.size() != 2) throw ParseError(line_no, "expected: <node> <host:port>");
    auto node = detail::parse_int(tok[0]);
    if (!node || *node < 1 || *node > engine_.node_count())
      throw ParseError(line_no, fmt::format("node id outside 1..{}", engine_.node_count()));
    try {
      register_node(static_cast<NodeId>(*node), std::string(tok[1]));
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
  }
}

std::optional<std::string> ControllerCore::address_of(NodeId node) const {
  auto it = addresses_.find(node);
  if (it == addresses_.end()) return std::nullopt;
  return it->second;
}

std::vector<Outgoing> ControllerCore::handle(std::span<const std::uint8_t> datagram,
                                             const std::string& from) {
  Message msg;
  try {
    msg = decode(datagram);
  } catch (const MalformedDatagram& e) {
    ++dropped_;
    log(fmt::format("drop {} bytes from {}: {}", datagram.size(), from, e.what()));
    return {};
  }

  const auto in_range = [&](NodeId id) {
    return id >= 1 && id <= static_cast<NodeId>(engine_.node_count());
  };

  std::vector<Outgoing> out;
  if (auto* ping = std::get_if<PingMessage>(&msg)) {
    if (ping->pong || !in_range(ping->node)) {
      ++dropped_;
      log(fmt::format("drop ping from {} for node {}", from, ping->node));
      return {};
    }
    ++accepted_;
    addresses_.try_emplace(ping->node, from);
    out.push_back(Outgoing{from, encode(PingMessage{true, ping->node, ping->seq})});
    sent_ += out.size();
    return out;
  }

  auto* report = std::get_if<ReportMessage>(&msg);
  if (!report) {
    ++dropped_;
    log(fmt::format("drop unexpected distribute from {}", from));
    return {};
  }
  if (!in_range(report->node)) {
    ++dropped_;
    log(fmt::format("drop report from {}: node id {} outside 1..{}", from, report->node,
                    engine_.node_count()));
    return {};
  }
  for (NodeId b : report->blockers) {
    if (!in_range(b)) {
      ++dropped_;
      log(fmt::format("drop report from {}: blocker id {} outside 1..{}", from, b,
                      engine_.node_count()));
      return {};
    }
  }

  ++accepted_;
  addresses_.try_emplace(report->node, from);
  for (const DistributeMessage& d : engine_.process_message(*report)) {
    auto addr = address_of(d.node);
    if (!addr) {
      log(fmt::format("no address for node {}; bound {} mW not sent", d.node, d.bound));
      continue;
    }
    out.push_back(Outgoing{*addr, encode(d)});
  }
  sent_ += out.size();
  return out;
}

std::string ControllerCore::status() const {
  std::string out = engine_.status();
  out += fmt::format("accepted {} dropped {} sent {}\n", accepted_, dropped_, sent_);
  for (const auto& [node, addr] : addresses_) out += fmt::format("address {} {}\n", node, addr);
  return out;
}

// ---------------------------------------------------------------------------
// UDP transport

std::pair<std::string, std::uint16_t> split_address(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0)
    throw std::invalid_argument(fmt::format("address '{}' is not host:port", address));
  auto port = detail::parse_int(std::string_view(address).substr(colon + 1));
  if (!port || *port < 0 || *port > 65535)
    throw std::invalid_argument(fmt::format("bad port in '{}'", address));
  return {address.substr(0, colon), static_cast<std::uint16_t>(*port)};
}

namespace {

sockaddr_in resolve(const std::string& address) {
  auto [host, port] = split_address(address);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  if (inet_pton(AF_INET, host.c_str(), &sa.sin_addr) == 1) return sa;

  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  if (int rc = getaddrinfo(host.c_str(), nullptr, &hints, &res); rc != 0 || !res)
    throw std::runtime_error(fmt::format("cannot resolve '{}': {}", host, gai_strerror(rc)));
  sa.sin_addr = reinterpret_cast<const sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return sa;
}

std::string format_address(const sockaddr_in& sa) {
  char buf[INET_ADDRSTRLEN] = {};
  inet_ntop(AF_INET, &sa.sin_addr, buf, sizeof buf);
  return fmt::format("{}:{}", buf, ntohs(sa.sin_port));
}

[[noreturn]] void throw_errno(const std::string& what) {
  throw std::system_error(errno, std::generic_category(), what);
}

}  // namespace

UdpSocket::UdpSocket(const std::string& address) {
  sockaddr_in sa = resolve(address);
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) throw_errno("socket");
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
    int err = errno;
    ::close(fd_);
    errno = err;
    throw_errno(fmt::format("bind {}", address));
  }
}

UdpSocket::~UdpSocket() {
  if (fd_ >= 0) ::close(fd_);
}

std::string UdpSocket::local_address() const {
  sockaddr_in sa{};
  socklen_t len = sizeof sa;
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len) != 0) throw_errno("getsockname");
  return format_address(sa);
}

void UdpSocket::send_to(const std::string& address, std::span<const std::uint8_t> payload) {
  sockaddr_in sa = resolve(address);
  ssize_t n = ::sendto(fd_, payload.data(), payload.size(), 0,
                       reinterpret_cast<const sockaddr*>(&sa), sizeof sa);
  if (n < 0) throw_errno(fmt::format("sendto {}", address));
}

std::optional<UdpSocket::Datagram> UdpSocket::receive(std::chrono::milliseconds timeout) {
  pollfd pfd{fd_, POLLIN, 0};
  int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
  if (rc < 0) {
    if (errno == EINTR) return std::nullopt;
    throw_errno("poll");
  }
  if (rc == 0) return std::nullopt;

  Datagram d;
  d.payload.resize(kMaxDatagram + 1);
  sockaddr_in sa{};
  socklen_t len = sizeof sa;
  ssize_t n = ::recvfrom(fd_, d.payload.data(), d.payload.size(), MSG_TRUNC,
                         reinterpret_cast<sockaddr*>(&sa), &len);
  if (n < 0) throw_errno("recvfrom");
  d.truncated = static_cast<std::size_t>(n) > kMaxDatagram;
  d.payload.resize(std::min(static_cast<std::size_t>(n), d.payload.size()));
  d.from = format_address(sa);
  return d;
}

UdpController::UdpController(const std::string& bind_address, ControllerCore core)
    : socket_(bind_address), core_(std::move(core)) {}

bool UdpController::poll_once(std::chrono::milliseconds timeout) {
  auto d = socket_.receive(timeout);
  if (!d) return false;
  for (const Outgoing& o : core_.handle(d->payload, d->from)) {
    try {
      socket_.send_to(o.address, o.payload);
    } catch (const std::exception& e) {
      std::cerr << "send failed: " << e.what() << '\n';
    }
  }
  if (!status_file_.empty()) {
    std::ofstream out(status_file_, std::ios::trunc);
    out << core_.status();
  }
  return true;
}

void UdpController::run(const std::atomic<bool>& stop) {
  while (!stop.load()) poll_once(std::chrono::milliseconds{50});
}

}  // namespace pwrdist::net
