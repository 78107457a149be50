#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pwrdist/model.hpp"

namespace pwrdist {

using NodeId = std::uint32_t;

enum class NodeState : std::uint8_t { Running = 0, Blocked = 1 };

const char* to_string(NodeState s);

/// How the controller sizes the budget freed by blocked nodes.
enum class BudgetMode {
  /// Each blocked node frees exactly nominal - idle, whatever it reported.
  /// Keeps running bounds plus blocked idle draw within the cluster bound.
  Safe,
  /// Sum of the reported power gains, as the online heuristic states it.
  Reported,
};

/// alpha = <state, node, blockers, power gain>.
struct ReportMessage {
  NodeState state = NodeState::Running;
  NodeId node = 0;
  std::vector<NodeId> blockers;
  Milliwatts power_gain = 0;

  static ReportMessage running(NodeId node) { return {NodeState::Running, node, {}, 0}; }
  static ReportMessage blocked(NodeId node, std::vector<NodeId> blockers, Milliwatts gain) {
    return {NodeState::Blocked, node, std::move(blockers), gain};
  }

  /// Throws std::invalid_argument if a Running report carries blockers or gain.
  void validate() const;
  bool operator==(const ReportMessage&) const = default;
};

/// gamma = (node, new power bound).
struct DistributeMessage {
  NodeId node = 0;
  Milliwatts bound = 0;

  bool operator==(const DistributeMessage&) const = default;
};

/// Power reclaimed when a job on `node` blocks while `active_cores` cores run
/// at `freq`: p(m-1, f) - p_s, or p(1, f) - p_s for a single active core.
/// Throws std::out_of_range when the table has no such entry.
Milliwatts power_gain(const PowerTable& table, int node, int active_cores, Megahertz freq);

struct OnlineNode {
  NodeId id = 0;
  NodeState state = NodeState::Running;
  Milliwatts power_gain = 0;
  int rank = 0;
  Milliwatts bound = 0;
  std::set<NodeId> blocked_by;  // outgoing edges of the online graph
};

/// Power distribution controller state machine. One report at a time; not
/// thread-safe, callers serialize access.
class PowerDistributor {
 public:
  /// `idle_power[i-1]` is node i's idle draw (used by BudgetMode::Safe).
  PowerDistributor(Milliwatts cluster_bound, int node_count, BudgetMode mode,
                   std::vector<Milliwatts> idle_power);
  PowerDistributor(Milliwatts cluster_bound, int node_count, BudgetMode mode,
                   const PowerTable& table);

  /// Upserts the sender, rewires its edges, recomputes budget and ranks, and
  /// returns bound changes for running nodes in ascending node order.
  /// Throws std::out_of_range for node ids outside 1..n and
  /// std::invalid_argument for malformed reports.
  std::vector<DistributeMessage> process_message(const ReportMessage& report);

  /// Ranks every running vertex by in-degree; returns the rank total.
  int rank_graph();

  /// p_b' = p_o + budget * r / t for running vertices (floor). With t == 0
  /// the budget is split evenly across running vertices.
  std::vector<DistributeMessage> distribute_power(Milliwatts budget, int total_rank);

  /// Budget freed by the currently blocked vertices.
  Milliwatts budget() const;

  Milliwatts nominal_bound() const noexcept { return nominal_; }
  Milliwatts cluster_bound() const noexcept { return cluster_bound_; }
  int node_count() const noexcept { return node_count_; }
  BudgetMode mode() const noexcept { return mode_; }

  const std::map<NodeId, OnlineNode>& vertices() const noexcept { return vertices_; }
  std::size_t edge_count() const;

  /// Human-readable snapshot of the online graph.
  std::string status() const;

 private:
  OnlineNode& upsert(NodeId id);
  void check_id(NodeId id) const;

  Milliwatts cluster_bound_;
  int node_count_;
  BudgetMode mode_;
  std::vector<Milliwatts> idle_power_;
  Milliwatts nominal_;
  std::map<NodeId, OnlineNode> vertices_;
};

}  // namespace pwrdist
