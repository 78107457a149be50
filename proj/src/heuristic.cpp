#include "pwrdist/heuristic.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace pwrdist {

const char* to_string(NodeState s) { return s == NodeState::Running ? "Running" : "Blocked"; }

void ReportMessage::validate() const {
  if (state == NodeState::Running && (!blockers.empty() || power_gain != 0))
    throw std::invalid_argument("a Running report carries no blockers and no power gain");
  if (power_gain < 0) throw std::invalid_argument("power gain must be non-negative");
}

Milliwatts power_gain(const PowerTable& table, int node, int active_cores, Megahertz freq) {
  if (active_cores < 1) throw std::invalid_argument("active cores must be at least 1");
  const NodePower& np = table.node(node);
  const int cores = active_cores > 1 ? active_cores - 1 : 1;
  auto p = np.power(cores, freq);
  if (!p)
    throw std::out_of_range(
        fmt::format("node {} has no power entry for {} cores at {} MHz", node, cores, freq));
  return *p - np.idle_power();
}

PowerDistributor::PowerDistributor(Milliwatts cluster_bound, int node_count, BudgetMode mode,
                                   std::vector<Milliwatts> idle_power)
    : cluster_bound_(cluster_bound),
      node_count_(node_count),
      mode_(mode),
      idle_power_(std::move(idle_power)),
      nominal_(nominal_power_bound(cluster_bound, node_count)) {
  if (idle_power_.size() != static_cast<std::size_t>(node_count))
    throw std::invalid_argument("one idle power per node required");
}

PowerDistributor::PowerDistributor(Milliwatts cluster_bound, int node_count, BudgetMode mode,
                                   const PowerTable& table)
    : PowerDistributor(cluster_bound, node_count, mode, [&] {
        std::vector<Milliwatts> idle;
        for (int node = 1; node <= node_count; ++node) idle.push_back(table.node(node).idle_power());
        return idle;
      }()) {}

void PowerDistributor::check_id(NodeId id) const {
  if (id < 1 || id > static_cast<NodeId>(node_count_))
    throw std::out_of_range(fmt::format("node id {} outside 1..{}", id, node_count_));
}

OnlineNode& PowerDistributor::upsert(NodeId id) {
  auto [it, fresh] = vertices_.try_emplace(id);
  if (fresh) {
    it->second.id = id;
    it->second.bound = nominal_;
  }
  return it->second;
}

std::vector<DistributeMessage> PowerDistributor::process_message(const ReportMessage& report) {
  report.validate();
  check_id(report.node);
  for (NodeId b : report.blockers) check_id(b);

  OnlineNode& v = upsert(report.node);
  v.state = report.state;
  v.power_gain = report.power_gain;

  // UpdateEdges: drop outgoing edges, then one per blocker.
  v.blocked_by.clear();
  for (NodeId b : report.blockers)
    if (b != report.node) v.blocked_by.insert(b);
  std::vector<NodeId> blockers(v.blocked_by.begin(), v.blocked_by.end());
  for (NodeId b : blockers) upsert(b);

  const Milliwatts eps = budget();
  const int total = rank_graph();
  return distribute_power(eps, total);
}

Milliwatts PowerDistributor::budget() const {
  Milliwatts eps = 0;
  for (const auto& [id, u] : vertices_) {
    if (u.state != NodeState::Blocked) continue;
    if (mode_ == BudgetMode::Reported)
      eps += u.power_gain;
    else
      eps += std::max<Milliwatts>(0, nominal_ - idle_power_[id - 1]);
  }
  return eps;
}

int PowerDistributor::rank_graph() {
  std::map<NodeId, int> indegree;
  for (const auto& [id, u] : vertices_)
    for (NodeId b : u.blocked_by) ++indegree[b];
  int total = 0;
  for (auto& [id, u] : vertices_) {
    if (u.state == NodeState::Running) {
      u.rank = indegree[id];
      total += u.rank;
    } else {
      u.rank = 0;
    }
  }
  return total;
}

std::vector<DistributeMessage> PowerDistributor::distribute_power(Milliwatts budget,
                                                                  int total_rank) {
  std::size_t running = 0;
  for (const auto& [id, u] : vertices_)
    if (u.state == NodeState::Running) ++running;

  std::vector<DistributeMessage> out;
  for (auto& [id, u] : vertices_) {
    if (u.state != NodeState::Running) continue;
    Milliwatts share = 0;
    if (total_rank > 0)
      share = budget * u.rank / total_rank;
    else if (running > 0)
      share = budget / static_cast<Milliwatts>(running);
    const Milliwatts next = std::min(nominal_ + share, cluster_bound_);
    if (u.bound != next) {
      u.bound = next;
      out.push_back(DistributeMessage{id, next});
    }
  }
  return out;
}

std::size_t PowerDistributor::edge_count() const {
  std::size_t n = 0;
  for (const auto& [id, u] : vertices_) n += u.blocked_by.size();
  return n;
}

std::string PowerDistributor::status() const {
  std::string out = fmt::format("cluster_bound {} mW, nodes {}, nominal {} mW, mode {}\n",
                                cluster_bound_, node_count_, nominal_,
                                mode_ == BudgetMode::Safe ? "safe" : "reported");
  int total = 0;
  for (const auto& [id, u] : vertices_) total += u.state == NodeState::Running ? u.rank : 0;
  out += fmt::format("budget {} mW, total rank {}, edges {}\n", budget(), total, edge_count());
  for (const auto& [id, u] : vertices_) {
    out += fmt::format("node {} {}", id, to_string(u.state));
    if (u.state == NodeState::Running)
      out += fmt::format(" rank {} bound {} mW", u.rank, u.bound);
    else
      out += fmt::format(" gain {} mW", u.power_gain);
    if (!u.blocked_by.empty()) {
      out += " blocked_by";
      for (NodeId b : u.blocked_by) out += fmt::format(" {}", b);
    }
    out += "\n";
  }
  return out;
}

}  // namespace pwrdist
