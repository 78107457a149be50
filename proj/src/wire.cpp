#include <fmt/format.h>

#include "pwrdist/netproto.hpp"

namespace pwrdist::net {

namespace {

constexpr std::uint8_t kMagic0 = 'P';
constexpr std::uint8_t kMagic1 = 'D';

void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

Bytes header(MessageType type) {
  return Bytes{kMagic0, kMagic1, kVersion, static_cast<std::uint8_t>(type)};
}

std::uint32_t milliwatts_field(Milliwatts v, const char* what) {
  if (v < 0 || v > Milliwatts{UINT32_MAX})
    throw std::invalid_argument(fmt::format("{} {} mW does not fit the wire field", what, v));
  return static_cast<std::uint32_t>(v);
}

void expect_size(std::span<const std::uint8_t> b, std::size_t size, const char* kind) {
  if (b.size() != size)
    throw MalformedDatagram(
        fmt::format("{} datagram has {} bytes, expected {}", kind, b.size(), size));
}

}  // namespace

Bytes encode(const ReportMessage& m) {
  m.validate();
  if (m.blockers.size() > kMaxBlockers)
    throw std::invalid_argument(
        fmt::format("{} blockers exceed the wire limit of {}", m.blockers.size(), kMaxBlockers));
  Bytes out = header(MessageType::Report);
  out.reserve(report_size(m.blockers.size()));
  put_u32(out, m.node);
  out.push_back(static_cast<std::uint8_t>(m.state));
  put_u32(out, milliwatts_field(m.power_gain, "power gain"));
  out.push_back(static_cast<std::uint8_t>(m.blockers.size()));
  for (NodeId b : m.blockers) put_u32(out, b);
  return out;
}

Bytes encode(const DistributeMessage& m) {
  Bytes out = header(MessageType::Distribute);
  put_u32(out, m.node);
  put_u32(out, milliwatts_field(m.bound, "power bound"));
  return out;
}

Bytes encode(const PingMessage& m) {
  Bytes out = header(m.pong ? MessageType::Pong : MessageType::Ping);
  put_u32(out, m.node);
  put_u32(out, m.seq);
  return out;
}

Bytes encode(const Message& m) {
  return std::visit([](const auto& v) { return encode(v); }, m);
}

Message decode(std::span<const std::uint8_t> b) {
  if (b.size() > kMaxDatagram) throw MalformedDatagram(fmt::format("oversized ({}+ bytes)", b.size()));
  if (b.size() < 4) throw MalformedDatagram(fmt::format("truncated header ({} bytes)", b.size()));
  if (b[0] != kMagic0 || b[1] != kMagic1) throw MalformedDatagram("bad magic");
  if (b[2] != kVersion) throw MalformedDatagram(fmt::format("unsupported version {}", b[2]));

  switch (b[3]) {
    case static_cast<std::uint8_t>(MessageType::Report): {
      if (b.size() < kReportHeaderSize)
        throw MalformedDatagram(fmt::format("truncated report ({} bytes)", b.size()));
      const std::size_t count = b[13];
      expect_size(b, report_size(count), "report");
      ReportMessage m;
      m.node = get_u32(b, 4);
      if (b[8] > 1) throw MalformedDatagram(fmt::format("bad state byte {}", b[8]));
      m.state = static_cast<NodeState>(b[8]);
      m.power_gain = get_u32(b, 9);
      m.blockers.reserve(count);
      for (std::size_t k = 0; k < count; ++k) m.blockers.push_back(get_u32(b, 14 + 4 * k));
      if (m.state == NodeState::Running && (count != 0 || m.power_gain != 0))
        throw MalformedDatagram("running report with blockers or power gain");
      return m;
    }
    case static_cast<std::uint8_t>(MessageType::Distribute):
      expect_size(b, kDistributeSize, "distribute");
      return DistributeMessage{get_u32(b, 4), get_u32(b, 8)};
    case static_cast<std::uint8_t>(MessageType::Ping):
    case static_cast<std::uint8_t>(MessageType::Pong):
      expect_size(b, kPingSize, "ping");
      return PingMessage{b[3] == static_cast<std::uint8_t>(MessageType::Pong), get_u32(b, 4),
                         get_u32(b, 8)};
    default:
      throw MalformedDatagram(fmt::format("unknown message type {}", b[3]));
  }
}

Megahertz power_to_frequency(const PowerTable& table, int node, Milliwatts bound) {
  auto f = table.node(node).max_frequency_under(bound);
  if (!f)
    throw InfeasibleError(
        fmt::format("bound {} mW is below node {}'s minimum operating power", bound, node));
  return *f;
}

}  // namespace pwrdist::net
