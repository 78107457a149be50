#pragma once

#include <chrono>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "pwrdist/depth.hpp"
#include "pwrdist/model.hpp"

namespace pwrdist {

/// Candidate per-job power bounds for every node (ascending).
using PowerBoundSet = std::map<int, std::vector<Milliwatts>>;

/// One bound per single-core frequency of each node 1..node_count.
PowerBoundSet power_bound_set(const PowerTable& table, int node_count);

struct IlpTerm {
  std::size_t var;  // index into IlpInstance::variables
  double coef;
};

enum class RowSense { Equal, LessEqual };

struct IlpRow {
  std::string name;
  std::vector<IlpTerm> terms;
  double t_coef = 0.0;  // coefficient of the makespan variable t
  RowSense sense = RowSense::LessEqual;
  double rhs = 0.0;
};

/// Binary x_{j,b}: job `job` runs under bound `bound`.
struct IlpVariable {
  JobRef job;
  Milliwatts bound;
  Megahertz freq;
  double time;  // tau(j, b)
  std::string name;
};

/// Choices available to one job, in ascending bound order.
struct JobChoices {
  JobRef job;
  int node;
  DepthRange range;
  std::vector<std::size_t> vars;
};

/// min t subject to unique assignment per job, one power row per depth
/// level and one makespan row per node.
struct IlpInstance {
  int node_count = 0;
  Milliwatts cluster_bound = 0;
  std::vector<JobId> job_ids;  // by JobRef
  std::vector<IlpVariable> variables;
  std::vector<JobChoices> jobs;  // by JobRef
  std::vector<IlpRow> assignment_rows;
  std::vector<IlpRow> power_rows;     // row d covers depth level d
  std::vector<IlpRow> makespan_rows;  // row i-1 covers node i

  std::size_t assignment_variable_count() const noexcept { return variables.size(); }
  std::size_t constraint_count() const noexcept {
    return assignment_rows.size() + power_rows.size() + makespan_rows.size();
  }
};

/// Throws InfeasibleError when some node's smallest bound exceeds the cluster
/// bound, or when a candidate bound admits no frequency.
IlpInstance build_instance(const DependencyGraph& graph, const std::vector<DepthRange>& ranges,
                           const PowerBoundSet& bounds, const PowerTable& table,
                           Milliwatts cluster_bound);

/// Convenience: depth ranges and bound set derived from the graph and table.
IlpInstance build_instance(const DependencyGraph& graph, const PowerTable& table,
                           Milliwatts cluster_bound);

/// CPLEX LP text (Minimize / Subject To / Bounds / Binaries / End).
std::string export_lp(const IlpInstance& inst);

struct Assignment {
  PowerMap bounds{0};
  std::vector<std::size_t> choice;  // chosen variable per job
  double objective = 0.0;           // t
  bool optimal = false;
  double lower_bound = 0.0;         // proven bound on t when not optimal
  std::size_t nodes_explored = 0;
};

/// Depth-first branch and bound. Jobs are branched in (depth, node, index)
/// order, bounds descending; among equal objectives the first assignment in
/// that order wins. A zero time limit means unlimited. Throws InfeasibleError
/// when no assignment satisfies every power row.
Assignment solve_branch_and_bound(const IlpInstance& inst,
                                  std::chrono::milliseconds time_limit = std::chrono::milliseconds{0});

/// Full enumeration in the same order as the solver. Test oracle only;
/// throws std::length_error beyond 10^7 assignments.
Assignment exhaustive_oracle(const IlpInstance& inst);

/// Whether `choice` satisfies every assignment and power row.
bool is_feasible(const IlpInstance& inst, const std::vector<std::size_t>& choice);

/// max over nodes of summed job times for `choice`.
double objective_of(const IlpInstance& inst, const std::vector<std::size_t>& choice);

/// CSV node,job,bound_mw,freq_mhz,time in job order.
std::string format_assignment_csv(const IlpInstance& inst, const Assignment& a);

}  // namespace pwrdist
