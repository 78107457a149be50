#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "pwrdist/netproto.hpp"
#include "pwrdist/simkernel.hpp"

namespace pwrdist::net {

namespace {

using Clock = std::chrono::steady_clock;

// Waits for the pong carrying `seq`, collecting any distributes that arrive
// before it. Other datagrams are ignored.
bool await_pong(UdpSocket& socket, std::uint32_t seq, std::chrono::milliseconds timeout,
                std::vector<DistributeMessage>* distributes) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) return false;
    auto d = socket.receive(left);
    if (!d) return false;
    Message m;
    try {
      m = decode(d->payload);
    } catch (const MalformedDatagram&) {
      continue;
    }
    if (auto* p = std::get_if<PingMessage>(&m); p && p->pong && p->seq == seq) return true;
    if (auto* dist = std::get_if<DistributeMessage>(&m); dist && distributes)
      distributes->push_back(*dist);
  }
}

}  // namespace

double measure_rtt(UdpSocket& socket, const std::string& controller, NodeId node, int probes,
                   std::chrono::milliseconds probe_timeout) {
  if (probes < 1) throw std::invalid_argument("at least one RTT probe required");
  std::vector<double> samples;
  for (int k = 0; k < probes; ++k) {
    const auto seq = static_cast<std::uint32_t>(k + 1);
    const auto start = Clock::now();
    socket.send_to(controller, encode(PingMessage{false, node, seq}));
    if (!await_pong(socket, seq, probe_timeout, nullptr))
      throw std::runtime_error(fmt::format("no pong from {} for probe {}", controller, seq));
    samples.push_back(std::chrono::duration<double>(Clock::now() - start).count());
  }
  return median(samples);
}

ReplayResult replay_trace(const std::vector<TraceRow>& trace, const std::string& controller,
                          const ReplayOptions& options) {
  ReplayResult result;
  result.trace_rows = trace.size();
  if (trace.empty()) return result;

  UdpSocket socket("0.0.0.0:0");
  std::set<NodeId> nodes;
  for (const auto& row : trace) {
    nodes.insert(row.report.node);
    nodes.insert(row.report.blockers.begin(), row.report.blockers.end());
  }

  std::uint32_t seq = 1000;
  for (NodeId node : nodes) {
    socket.send_to(controller, encode(PingMessage{false, node, ++seq}));
    if (!await_pong(socket, seq, options.reply_timeout, nullptr))
      throw std::runtime_error(fmt::format("controller {} did not register node {}", controller, node));
  }

  result.timeout = options.timeout ? *options.timeout
                                   : measure_rtt(socket, controller, *nodes.begin());
  result.sent = plan_replay(trace, result.timeout);

  for (const auto& s : result.sent) {
    socket.send_to(controller, encode(s.report));
    socket.send_to(controller, encode(PingMessage{false, s.report.node, ++seq}));
    if (!await_pong(socket, seq, options.reply_timeout, &result.distributes))
      throw std::runtime_error(fmt::format("controller {} stopped answering", controller));
  }
  return result;
}

}  // namespace pwrdist::net
