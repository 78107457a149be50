#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "pwrdist/netproto.hpp"
#include "text_util.hpp"

namespace pwrdist::net {

ReportManagerBuffer::ReportManagerBuffer(double timeout) : timeout_(timeout) {
  if (!(timeout >= 0.0)) throw std::invalid_argument("report timeout must be non-negative");
}

void ReportManagerBuffer::enqueue(ReportMessage report, double now) {
  queue_.push_back(Pending{std::move(report), now});
}

// Scan from the head: a Blocked report whose node's next report is Running
// and arrived before the Blocked one expired is cancelled together with it.
void ReportManagerBuffer::cancel_pairs() {
  std::size_t i = 0;
  while (i < queue_.size()) {
    const Pending& head = queue_[i];
    std::size_t j = i + 1;
    while (j < queue_.size() && queue_[j].report.node != head.report.node) ++j;
    if (head.report.state == NodeState::Blocked && j < queue_.size() &&
        queue_[j].report.state == NodeState::Running &&
        queue_[j].enqueued < head.enqueued + timeout_) {
      queue_.erase(queue_.begin() + static_cast<std::ptrdiff_t>(j));
      queue_.erase(queue_.begin() + static_cast<std::ptrdiff_t>(i));
      cancelled_ += 2;
      continue;
    }
    ++i;
  }
}

std::vector<ReportMessage> ReportManagerBuffer::flush(double now) {
  cancel_pairs();
  std::vector<ReportMessage> out;
  while (!queue_.empty() && queue_.front().enqueued + timeout_ <= now) {
    out.push_back(std::move(queue_.front().report));
    queue_.pop_front();
  }
  emitted_ += out.size();
  return out;
}

std::vector<TraceRow> parse_trace(std::string_view text) {
  std::vector<TraceRow> rows;
  bool header_seen = false;
  std::size_t line_no = 0;
  for (std::string_view raw : detail::split_lines(text)) {
    ++line_no;
    std::string_view line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    auto fields = detail::split(line, ',');
    for (auto& f : fields) f = detail::trim(f);
    if (!header_seen) {
      header_seen = true;
      if (fields.size() == 5 && fields[0] == "time_s") continue;
      throw ParseError(line_no, "expected header time_s,node,state,blockers,gain_mw");
    }
    if (fields.size() != 5)
      throw ParseError(line_no, fmt::format("expected 5 fields, got {}", fields.size()));

    TraceRow row;
    row.line = line_no;
    auto t = detail::parse_double(fields[0]);
    if (!t || *t < 0.0) throw ParseError(line_no, "time must be a non-negative number");
    row.time = *t;
    auto node = detail::parse_int(fields[1]);
    if (!node || *node < 1 || *node > UINT32_MAX) throw ParseError(line_no, "bad node id");
    row.report.node = static_cast<NodeId>(*node);

    if (fields[2] == "Running" || fields[2] == "0")
      row.report.state = NodeState::Running;
    else if (fields[2] == "Blocked" || fields[2] == "1")
      row.report.state = NodeState::Blocked;
    else
      throw ParseError(line_no, fmt::format("bad state '{}'", fields[2]));

    if (!fields[3].empty()) {
      for (std::string_view b : detail::split(fields[3], ';')) {
        auto id = detail::parse_int(detail::trim(b));
        if (!id || *id < 1 || *id > UINT32_MAX) throw ParseError(line_no, "bad blocker id");
        row.report.blockers.push_back(static_cast<NodeId>(*id));
      }
    }
    auto gain = fields[4].empty() ? std::optional<std::int64_t>{0} : detail::parse_int(fields[4]);
    if (!gain || *gain < 0) throw ParseError(line_no, "gain must be a non-negative integer");
    row.report.power_gain = *gain;

    if (row.report.state == NodeState::Running &&
        (!row.report.blockers.empty() || row.report.power_gain != 0))
      throw ParseError(line_no, "a Running row carries no blockers and no gain");
    if (!rows.empty() && row.time < rows.back().time)
      throw ParseError(line_no, "rows must be in time order");
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<TraceRow> load_trace(const std::string& path) {
  return parse_trace(detail::read_file(path));
}

std::vector<ScheduledReport> plan_replay(const std::vector<TraceRow>& trace, double timeout) {
  ReportManagerBuffer buffer(timeout);
  std::set<double> checkpoints;
  for (const auto& row : trace) {
    checkpoints.insert(row.time);
    checkpoints.insert(row.time + timeout);
  }
  std::vector<ScheduledReport> out;
  std::size_t next = 0;
  for (double now : checkpoints) {
    for (auto& r : buffer.flush(now)) out.push_back(ScheduledReport{now, std::move(r)});
    for (; next < trace.size() && trace[next].time == now; ++next)
      buffer.enqueue(trace[next].report, now);
    // Only a zero timeout can expire a report at the instant it was enqueued.
    for (auto& r : buffer.flush(now)) out.push_back(ScheduledReport{now, std::move(r)});
  }
  return out;
}

}  // namespace pwrdist::net
