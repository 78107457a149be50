#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pwrdist {

using Milliwatts = std::int64_t;
using Megahertz = std::int64_t;

/// Dense index of a job inside a DependencyGraph.
using JobRef = std::size_t;

/// Identifies the j-th job (1-based) on node i (1-based).
struct JobId {
  int node = 0;
  int index = 0;

  auto operator<=>(const JobId&) const = default;
};

std::string to_string(const JobId& id);

struct Job {
  JobId id;
  double work = 0.0;             // cycles-equivalent, time = work / MHz
  double serial_fraction = 0.0;  // share of work that does not scale with the bound
};

/// Raised for malformed graph/power-table text. Carries the 1-based line.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Raised when a structurally well-formed graph breaks a model invariant.
/// line() is 0 when the violation has no single source line (cycles).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what, std::size_t line = 0);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Raised when a power bound admits no operating point.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Job dependency graph. Immutable once built; construct through
/// GraphBuilder or parse_graph.
class DependencyGraph {
 public:
  int node_count() const noexcept { return node_count_; }
  std::size_t job_count() const noexcept { return jobs_.size(); }
  std::size_t edge_count() const noexcept { return edge_count_; }

  const Job& job(JobRef ref) const { return jobs_.at(ref); }
  std::span<const Job> jobs() const noexcept { return jobs_; }
  std::optional<JobRef> find(JobId id) const;
  JobRef ref(JobId id) const;  // throws std::out_of_range

  /// Jobs this job depends on / jobs depending on it, ascending by ref.
  std::span<const JobRef> predecessors(JobRef ref) const { return preds_.at(ref); }
  std::span<const JobRef> successors(JobRef ref) const { return succs_.at(ref); }

  /// Job sequence of node `node` (1-based), ordered by job index.
  std::span<const JobRef> node_jobs(int node) const { return node_jobs_.at(node - 1); }

  /// A topological order (stable: ties broken by ref).
  std::span<const JobRef> topological_order() const noexcept { return topo_; }

  std::vector<JobRef> initial_jobs() const;
  std::vector<JobRef> final_jobs() const;

  /// Same structure with per-job work replaced (one value per ref, each > 0).
  DependencyGraph with_work(std::span<const double> work) const;

 private:
  friend class GraphBuilder;

  int node_count_ = 0;
  std::size_t edge_count_ = 0;
  std::vector<Job> jobs_;
  std::map<JobId, JobRef> index_;
  std::vector<std::vector<JobRef>> preds_;
  std::vector<std::vector<JobRef>> succs_;
  std::vector<std::vector<JobRef>> node_jobs_;
  std::vector<JobRef> topo_;
};

/// Incremental construction with full validation in build().
class GraphBuilder {
 public:
  explicit GraphBuilder(int node_count);

  /// `line` tags diagnostics with a source line (0 = none).
  GraphBuilder& add_job(JobId id, double work, double serial_fraction = 0.0, std::size_t line = 0);
  /// `target` depends on `source`. Duplicates are idempotent.
  GraphBuilder& add_dependency(JobId target, JobId source, std::size_t line = 0);

  /// Adds implicit serial edges and validates. Throws ValidationError.
  DependencyGraph build() const;

 private:
  int node_count_;
  struct PendingDep {
    JobId target;
    JobId source;
    std::size_t line;
  };
  std::vector<Job> jobs_;
  std::vector<std::size_t> job_lines_;
  std::vector<PendingDep> deps_;
};

DependencyGraph parse_graph(std::string_view text);
DependencyGraph load_graph(const std::string& path);
std::string format_graph(const DependencyGraph& graph);

struct PowerEntry {
  int cores = 1;
  Megahertz freq_mhz = 0;
  Milliwatts power_mw = 0;
};

/// Power characteristics of one node: idle draw plus a (cores, MHz) -> mW table.
class NodePower {
 public:
  NodePower() = default;
  NodePower(Milliwatts idle_mw, std::vector<PowerEntry> entries);

  Milliwatts idle_power() const noexcept { return idle_mw_; }
  std::span<const PowerEntry> entries() const noexcept { return entries_; }

  /// Frequencies available with `cores` active, ascending.
  std::vector<Megahertz> frequencies(int cores = 1) const;
  std::optional<Milliwatts> power(int cores, Megahertz freq) const;

  /// Highest frequency whose single-core power fits under `bound`.
  std::optional<Megahertz> max_frequency_under(Milliwatts bound) const;
  Megahertz max_frequency() const;
  Milliwatts min_operating_power() const;

 private:
  Milliwatts idle_mw_ = 0;
  std::vector<PowerEntry> entries_;  // sorted by (cores, freq)
};

/// Per-node power lookup. Node "*" rows in the CSV form a default profile
/// used by any node without explicit rows.
class PowerTable {
 public:
  void set_node(int node, NodePower power);
  void set_default(NodePower power);

  const NodePower& node(int node) const;  // throws std::out_of_range
  bool has_node(int node) const;

 private:
  std::map<int, NodePower> nodes_;
  std::optional<NodePower> default_;
};

PowerTable parse_power_table(std::string_view csv);
PowerTable load_power_table(const std::string& path);

/// Candidate per-job bounds for a node: p(1, f) for every supported f, ascending.
std::vector<Milliwatts> power_bounds(const PowerTable& table, int node);

/// Execution time of `job` when its node runs at `freq`.
double job_time_at(const Job& job, Megahertz freq, Megahertz top_freq);

/// tau(J, P): time of `job` under power bound `bound`. Throws InfeasibleError.
double execution_time(const Job& job, Milliwatts bound, const PowerTable& table);

/// Job -> power bound mapping (pi).
class PowerMap {
 public:
  explicit PowerMap(std::size_t job_count) : bounds_(job_count) {}
  static PowerMap uniform(std::size_t job_count, Milliwatts bound);

  void set(JobRef ref, Milliwatts bound) { bounds_.at(ref) = bound; }
  bool mapped(JobRef ref) const { return ref < bounds_.size() && bounds_[ref].has_value(); }
  Milliwatts at(JobRef ref) const;  // throws std::out_of_range when unmapped
  std::size_t size() const noexcept { return bounds_.size(); }
  bool complete() const;

  bool operator==(const PowerMap&) const = default;

 private:
  std::vector<std::optional<Milliwatts>> bounds_;
};

/// Sum of job times along a dependency-chained path.
double path_time(const DependencyGraph& graph, std::span<const JobRef> path, const PowerMap& bounds,
                 const PowerTable& table);

/// Longest path through the DAG given per-job durations.
double longest_path(const DependencyGraph& graph, std::span<const double> durations);

/// Makespan (longest execution path) under `bounds`.
double total_execution_time(const DependencyGraph& graph, const PowerMap& bounds,
                            const PowerTable& table);

/// Equal share of the cluster bound; integer division, remainder unallocated.
Milliwatts nominal_power_bound(Milliwatts cluster_bound, int node_count);

/// Smallest cluster bound at which the equal share admits a frequency on every node.
Milliwatts min_feasible_cluster_bound(const PowerTable& table, int node_count);

}  // namespace pwrdist
