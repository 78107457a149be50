#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pwrdist/heuristic.hpp"
#include "pwrdist/model.hpp"

namespace pwrdist {

enum class SimMode { EqualShare, Ilp, Heuristic };

const char* to_string(SimMode mode);
std::optional<SimMode> parse_sim_mode(const std::string& name);  // equal | ilp | heuristic

struct SimConfig {
  Milliwatts cluster_bound = 0;
  SimMode mode = SimMode::EqualShare;
  double latency = 0.0;           // report -> bound change, heuristic mode
  double transition_delay = 0.0;  // extra DVFS delay on every bound change, heuristic mode
  BudgetMode budget_mode = BudgetMode::Safe;
  std::uint64_t seed = 0;
  std::chrono::milliseconds ilp_time_limit{0};
};

struct JobRecord {
  JobId id;
  double start = 0.0;
  double finish = 0.0;
  Milliwatts bound = 0;  // bound in force when the job started
  Megahertz freq = 0;
};

/// Total cluster draw from `time` until the next sample.
struct PowerSample {
  double time = 0.0;
  Milliwatts power = 0;
};

struct PowerViolation {
  double begin = 0.0;
  double end = 0.0;
  Milliwatts peak = 0;
};

struct SimEvent {
  double time = 0.0;
  int node = 0;
  int job = 0;  // job index, 0 when not tied to a job
  std::string kind;  // start | finish | block | unblock | rebound | done
  Milliwatts bound = 0;
  Megahertz freq = 0;
};

struct SimResult {
  SimMode mode = SimMode::EqualShare;
  Milliwatts cluster_bound = 0;
  double makespan = 0.0;
  std::vector<JobRecord> jobs;  // by JobRef
  std::vector<PowerSample> power_trace;
  Milliwatts peak_power = 0;
  double average_power = 0.0;
  std::vector<PowerViolation> violations;
  std::vector<SimEvent> events;
  std::size_t reports = 0;
  std::size_t distributes = 0;
  std::optional<double> speedup;

  void set_baseline(double baseline_makespan);

  /// time,node,job,event,bound_mw,freq_mhz
  std::string events_csv() const;
  /// makespan=... avg_power_mw=... peak_power_mw=... speedup=...
  std::string summary() const;
};

/// Every job at the nominal bound. Throws InfeasibleError if the nominal
/// bound admits no frequency on some node.
SimResult run_equal_share(const DependencyGraph& graph, const PowerTable& table,
                          Milliwatts cluster_bound);

/// Every job at its mapped bound; instants where the true concurrent draw
/// exceeds `cluster_bound` are reported as violations.
SimResult run_with_assignment(const DependencyGraph& graph, const PowerTable& table,
                              const PowerMap& bounds, Milliwatts cluster_bound);

/// Solves the power-bound ILP, then runs its assignment.
SimResult run_ilp(const DependencyGraph& graph, const PowerTable& table, Milliwatts cluster_bound,
                  std::chrono::milliseconds time_limit = std::chrono::milliseconds{0});

/// Online redistribution: emulated block detectors feed a PowerDistributor
/// whose bound changes take effect after latency + transition_delay.
SimResult run_heuristic(const DependencyGraph& graph, const PowerTable& table, const SimConfig& cfg);

/// Dispatches on cfg.mode.
SimResult simulate(const DependencyGraph& graph, const PowerTable& table, const SimConfig& cfg);

struct SweepConfig {
  Milliwatts cluster_bound = 0;  // 0: smallest feasible bound
  double mean = 10.0;
  std::vector<double> stddevs{0, 1, 2, 3, 4, 5, 6};
  int trials = 20;
  std::uint64_t seed = 1;
  BudgetMode budget_mode = BudgetMode::Safe;
  double latency = 0.0;
  std::chrono::milliseconds ilp_time_limit{0};
};

struct SweepTrial {
  double stddev = 0.0;
  int trial = 0;
  std::vector<double> nominal_times;  // by JobRef
  double equal_makespan = 0.0;
  double ilp_makespan = 0.0;
  double heuristic_makespan = 0.0;
  double ilp_objective = 0.0;
  bool ilp_optimal = true;
};

struct SweepRow {
  double stddev = 0.0;
  SimMode mode = SimMode::EqualShare;
  double median_speedup = 0.0;
};

struct SweepResult {
  Milliwatts cluster_bound = 0;
  std::vector<SweepTrial> trials;
  std::vector<SweepRow> rows;  // stddev-major, modes in equal/ilp/heuristic order

  /// stddev,mode,median_speedup
  std::string csv() const;
};

/// Nominal times drawn per job from a normal(mean, stddev) clamped below at
/// 0.1 * mean; all three modes run on every draw.
SweepResult sweep_stddev(const DependencyGraph& structure, const PowerTable& table,
                         const SweepConfig& cfg);

/// Rewrites job work so each job takes `times[ref]` at the nominal bound.
DependencyGraph with_nominal_times(const DependencyGraph& structure, const PowerTable& table,
                                   Milliwatts cluster_bound, const std::vector<double>& times);

double median(std::vector<double> values);

}  // namespace pwrdist
