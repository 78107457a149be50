#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "pwrdist/heuristic.hpp"
#include "pwrdist/model.hpp"

namespace pwrdist::net {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kVersion = 1;

enum class MessageType : std::uint8_t { Report = 1, Distribute = 2, Ping = 3, Pong = 4 };

// Report: "PD" ver type node:u32 state:u8 gain:u32 count:u8 blockers:u32[count]
// Distribute: "PD" ver type node:u32 bound:u32
// Ping/Pong: "PD" ver type node:u32 seq:u32
// All integers big-endian.
inline constexpr std::size_t kReportHeaderSize = 14;
inline constexpr std::size_t kDistributeSize = 12;
inline constexpr std::size_t kPingSize = 12;
inline constexpr std::size_t kMaxBlockers = 255;
inline constexpr std::size_t kMaxDatagram = kReportHeaderSize + 4 * kMaxBlockers;

class MalformedDatagram : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PingMessage {
  bool pong = false;
  NodeId node = 0;
  std::uint32_t seq = 0;

  bool operator==(const PingMessage&) const = default;
};

using Message = std::variant<ReportMessage, DistributeMessage, PingMessage>;

constexpr std::size_t report_size(std::size_t blockers) { return kReportHeaderSize + 4 * blockers; }

/// Throws std::invalid_argument for values that do not fit the wire fields.
Bytes encode(const ReportMessage& m);
Bytes encode(const DistributeMessage& m);
Bytes encode(const PingMessage& m);
Bytes encode(const Message& m);

/// Throws MalformedDatagram on bad magic, unknown version or type, wrong
/// length, or a Running report that carries blockers or gain.
Message decode(std::span<const std::uint8_t> bytes);

/// Highest frequency whose single-core power fits under `bound`.
/// Throws InfeasibleError when the bound is below the node's minimum.
Megahertz power_to_frequency(const PowerTable& table, int node, Milliwatts bound);

/// Ski-rental buffer in front of the report channel. A Blocked report is held
/// for `timeout` (the controller round-trip time); if the same node's next
/// report is Running and was enqueued before the Blocked one expired, both
/// are dropped. Everything else is released in enqueue order once expired.
class ReportManagerBuffer {
 public:
  explicit ReportManagerBuffer(double timeout);

  void enqueue(ReportMessage report, double now);
  std::vector<ReportMessage> flush(double now);

  std::size_t pending() const noexcept { return queue_.size(); }
  double timeout() const noexcept { return timeout_; }
  std::size_t emitted() const noexcept { return emitted_; }
  std::size_t cancelled() const noexcept { return cancelled_; }

 private:
  struct Pending {
    ReportMessage report;
    double enqueued = 0.0;
  };

  void cancel_pairs();

  double timeout_;
  std::deque<Pending> queue_;
  std::size_t emitted_ = 0;
  std::size_t cancelled_ = 0;
};

struct TraceRow {
  double time = 0.0;
  ReportMessage report;
  std::size_t line = 0;
};

/// time_s,node,state,blockers,gain_mw with a header row; state is Running,
/// Blocked, 0 or 1; blockers are ';'-separated. Rows must be in time order.
std::vector<TraceRow> parse_trace(std::string_view text);
std::vector<TraceRow> load_trace(const std::string& path);

struct ScheduledReport {
  double time = 0.0;
  ReportMessage report;
};

/// Runs a trace through a ReportManagerBuffer in virtual time. At equal
/// timestamps the buffer is flushed before new rows are enqueued.
std::vector<ScheduledReport> plan_replay(const std::vector<TraceRow>& trace, double timeout);

struct Outgoing {
  std::string address;
  Bytes payload;
};

using LogSink = std::function<void(const std::string&)>;

/// Transport-independent controller: decodes datagrams, drives a
/// PowerDistributor and addresses the replies.
class ControllerCore {
 public:
  explicit ControllerCore(PowerDistributor engine, LogSink log = {});

  /// One received datagram from `from` ("host:port").
  std::vector<Outgoing> handle(std::span<const std::uint8_t> datagram, const std::string& from);

  /// Static mapping; later first-contact learning never overrides it.
  void register_node(NodeId node, const std::string& address);
  /// Lines of "node host:port"; '#' starts a comment.
  void load_address_map(std::string_view text);

  std::optional<std::string> address_of(NodeId node) const;
  const PowerDistributor& engine() const noexcept { return engine_; }

  std::size_t accepted() const noexcept { return accepted_; }
  std::size_t dropped() const noexcept { return dropped_; }
  std::size_t sent() const noexcept { return sent_; }

  std::string status() const;

 private:
  void log(const std::string& line) const;

  PowerDistributor engine_;
  LogSink log_;
  std::map<NodeId, std::string> addresses_;
  std::size_t accepted_ = 0;
  std::size_t dropped_ = 0;
  std::size_t sent_ = 0;
};

/// "host:port" -> IPv4 socket address pieces; throws std::invalid_argument.
std::pair<std::string, std::uint16_t> split_address(const std::string& address);

class UdpSocket {
 public:
  /// Binds to `address`; port 0 picks an ephemeral port.
  explicit UdpSocket(const std::string& address = "127.0.0.1:0");
  ~UdpSocket();
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  std::string local_address() const;
  void send_to(const std::string& address, std::span<const std::uint8_t> payload);

  struct Datagram {
    Bytes payload;
    std::string from;
    bool truncated = false;
  };
  /// Waits up to `timeout` for one datagram.
  std::optional<Datagram> receive(std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
};

/// UDP service around ControllerCore. run() returns once `stop` is set.
class UdpController {
 public:
  UdpController(const std::string& bind_address, ControllerCore core);

  std::string local_address() const { return socket_.local_address(); }
  void run(const std::atomic<bool>& stop);
  /// Handles at most one datagram; false on timeout.
  bool poll_once(std::chrono::milliseconds timeout);

  const ControllerCore& core() const noexcept { return core_; }
  /// Rewritten with status() after every accepted datagram when non-empty.
  void set_status_file(std::string path) { status_file_ = std::move(path); }

 private:
  UdpSocket socket_;
  ControllerCore core_;
  std::string status_file_;
};

/// Median of `probes` ping/pong round trips, in seconds.
double measure_rtt(UdpSocket& socket, const std::string& controller, NodeId node, int probes = 5,
                   std::chrono::milliseconds probe_timeout = std::chrono::milliseconds{1000});

struct ReplayOptions {
  std::optional<double> timeout;  // unset: measured RTT
  std::chrono::milliseconds reply_timeout{2000};
};

struct ReplayResult {
  double timeout = 0.0;
  std::size_t trace_rows = 0;
  std::vector<ScheduledReport> sent;
  std::vector<DistributeMessage> distributes;
};

/// Registers every node in the trace with a ping, then sends the planned
/// reports and collects the controller's distribute messages. A ping after
/// each report marks the end of its reply burst. Throws std::runtime_error
/// when the controller stops answering.
ReplayResult replay_trace(const std::vector<TraceRow>& trace, const std::string& controller,
                          const ReplayOptions& options = {});

}  // namespace pwrdist::net
