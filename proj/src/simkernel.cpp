#include "pwrdist/simkernel.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "pwrdist/ilp.hpp"

namespace pwrdist {

const char* to_string(SimMode mode) {
  switch (mode) {
    case SimMode::EqualShare: return "equal";
    case SimMode::Ilp: return "ilp";
    case SimMode::Heuristic: return "heuristic";
  }
  return "?";
}

std::optional<SimMode> parse_sim_mode(const std::string& name) {
  if (name == "equal") return SimMode::EqualShare;
  if (name == "ilp") return SimMode::Ilp;
  if (name == "heuristic") return SimMode::Heuristic;
  return std::nullopt;
}

void SimResult::set_baseline(double baseline_makespan) {
  speedup = makespan > 0.0 ? baseline_makespan / makespan : 1.0;
}

std::string SimResult::events_csv() const {
  std::string out = "time,node,job,event,bound_mw,freq_mhz\n";
  for (const SimEvent& e : events)
    out += fmt::format("{},{},{},{},{},{}\n", e.time, e.node, e.job, e.kind, e.bound, e.freq);
  return out;
}

std::string SimResult::summary() const {
  return fmt::format("mode={} makespan={} avg_power_mw={:.3f} peak_power_mw={} speedup={}",
                     to_string(mode), makespan, average_power, peak_power,
                     speedup ? fmt::format("{:.6f}", *speedup) : std::string("n/a"));
}

namespace {

enum class EventType { Finish, ApplyBound };

struct QueuedEvent {
  double time;
  std::uint64_t seq;
  EventType type;
  int node;
  std::uint64_t epoch;  // Finish: must match the node's epoch to be live
  Milliwatts bound;     // ApplyBound
};

struct LaterFirst {
  bool operator()(const QueuedEvent& a, const QueuedEvent& b) const {
    if (a.time != b.time) return a.time > b.time;
    return a.seq > b.seq;
  }
};

struct NodeSim {
  int id = 0;
  std::size_t next = 0;  // position in the node's job sequence
  std::optional<JobRef> running;
  double remaining = 0.0;  // fraction of the running job still to do
  double last_update = 0.0;
  std::uint64_t epoch = 0;
  Milliwatts bound = 0;
  Megahertz freq = 0;
  bool blocked_reported = false;
  bool done = false;
};

class Simulation {
 public:
  Simulation(const DependencyGraph& graph, const PowerTable& table, Milliwatts cluster_bound,
             SimMode mode, const PowerMap* fixed, const SimConfig* cfg)
      : graph_(graph), table_(table), cluster_bound_(cluster_bound), mode_(mode), fixed_(fixed) {
    const Milliwatts nominal = nominal_power_bound(cluster_bound, graph.node_count());
    nodes_.resize(graph.node_count());
    for (int i = 1; i <= graph.node_count(); ++i) {
      NodeSim& n = nodes_[i - 1];
      n.id = i;
      n.bound = nominal;
      auto f = table.node(i).max_frequency_under(nominal);
      if (!fixed_ && !f)
        throw InfeasibleError(fmt::format(
            "nominal bound {} mW admits no frequency on node {}", nominal, i));
      n.freq = f.value_or(0);
    }
    if (mode_ == SimMode::Heuristic) {
      delay_ = cfg->latency + cfg->transition_delay;
      if (cfg->latency < 0 || cfg->transition_delay < 0)
        throw std::invalid_argument("latency and transition delay must be non-negative");
      engine_.emplace(cluster_bound, graph.node_count(), cfg->budget_mode, table);
    }
    finished_.assign(graph.job_count(), false);
    result_.mode = mode;
    result_.cluster_bound = cluster_bound;
    result_.jobs.resize(graph.job_count());
    for (JobRef r = 0; r < graph.job_count(); ++r) result_.jobs[r].id = graph.job(r).id;
  }

  SimResult run() {
    settle(0.0);
    while (!queue_.empty()) settle(queue_.top().time);

    for (const JobRecord& j : result_.jobs) result_.makespan = std::max(result_.makespan, j.finish);
    if (open_violation_) {
      open_violation_->end = result_.makespan;
      result_.violations.push_back(*open_violation_);
    }
    double energy = 0.0;
    for (std::size_t k = 0; k < result_.power_trace.size(); ++k) {
      const double begin = result_.power_trace[k].time;
      const double end =
          k + 1 < result_.power_trace.size() ? result_.power_trace[k + 1].time : result_.makespan;
      if (end > begin) energy += static_cast<double>(result_.power_trace[k].power) * (end - begin);
    }
    result_.average_power = result_.makespan > 0.0 ? energy / result_.makespan : 0.0;
    return std::move(result_);
  }

 private:
  // Processes everything due at `now`, lets idle nodes move on, and repeats
  // until nothing else happens at this instant. Zero-duration intermediate
  // states never reach the power trace.
  void settle(double now) {
    for (;;) {
      while (!queue_.empty() && queue_.top().time <= now) {
        QueuedEvent ev = queue_.top();
        queue_.pop();
        handle(ev, now);
      }
      for (NodeSim& n : nodes_) advance(n, now);
      if (queue_.empty() || queue_.top().time > now) break;
    }
    sample(now);
  }

  void handle(const QueuedEvent& ev, double now) {
    NodeSim& n = nodes_[ev.node - 1];
    if (ev.type == EventType::Finish) {
      if (!n.running || ev.epoch != n.epoch) return;
      const JobRef r = *n.running;
      n.running.reset();
      finished_[r] = true;
      result_.jobs[r].finish = now;
      ++n.next;
      log(now, n, graph_.job(r).id.index, "finish");
      return;
    }
    // ApplyBound
    ++result_.distributes;
    n.bound = ev.bound;
    const Megahertz f = table_.node(n.id).max_frequency_under(ev.bound).value_or(n.freq);
    if (n.running) {
      retime(n, now, f);
    } else {
      n.freq = f;
    }
    log(now, n, n.running ? graph_.job(*n.running).id.index : 0, "rebound");
  }

  double job_duration(JobRef r, Megahertz f) const {
    return job_time_at(graph_.job(r), f, table_.node(graph_.job(r).id.node).max_frequency());
  }

  void schedule_finish(NodeSim& n, double now) {
    const double t = now + n.remaining * job_duration(*n.running, n.freq);
    push(QueuedEvent{t, 0, EventType::Finish, n.id, ++n.epoch, 0});
  }

  // Work-conserving frequency change: only the unfinished remainder is re-timed.
  void retime(NodeSim& n, double now, Megahertz f) {
    const double elapsed = now - n.last_update;
    if (elapsed > 0.0) {
      n.remaining -= elapsed / job_duration(*n.running, n.freq);
      if (n.remaining < 0.0) n.remaining = 0.0;
    }
    n.last_update = now;
    if (f == n.freq) return;
    n.freq = f;
    schedule_finish(n, now);
  }

  void start(NodeSim& n, JobRef r, double now) {
    if (fixed_) {
      n.bound = fixed_->at(r);
      auto f = table_.node(n.id).max_frequency_under(n.bound);
      if (!f)
        throw InfeasibleError(fmt::format("bound {} mW admits no frequency for {}", n.bound,
                                          to_string(graph_.job(r).id)));
      n.freq = *f;
    }
    n.running = r;
    n.remaining = 1.0;
    n.last_update = now;
    JobRecord& rec = result_.jobs[r];
    rec.start = now;
    rec.bound = n.bound;
    rec.freq = n.freq;
    log(now, n, graph_.job(r).id.index, "start");
    schedule_finish(n, now);
  }

  void advance(NodeSim& n, double now) {
    if (n.running || n.done) return;
    auto seq = graph_.node_jobs(n.id);
    if (n.next == seq.size()) {
      n.done = true;
      log(now, n, 0, "done");
      // A finished node idles for the rest of the run and donates its share.
      if (engine_ && !n.blocked_reported) {
        n.blocked_reported = true;
        report(ReportMessage::blocked(n.id, {}, gain(n)), now);
      }
      return;
    }
    const JobRef r = seq[n.next];
    std::set<NodeId> unmet;
    for (JobRef p : graph_.predecessors(r))
      if (!finished_[p]) unmet.insert(static_cast<NodeId>(graph_.job(p).id.node));
    if (unmet.empty()) {
      if (engine_ && n.blocked_reported) {
        n.blocked_reported = false;
        log(now, n, graph_.job(r).id.index, "unblock");
        report(ReportMessage::running(n.id), now);
      }
      start(n, r, now);
      return;
    }
    if (engine_ && !n.blocked_reported) {
      n.blocked_reported = true;
      log(now, n, graph_.job(r).id.index, "block");
      report(ReportMessage::blocked(n.id, {unmet.begin(), unmet.end()}, gain(n)), now);
    }
  }

  Milliwatts gain(const NodeSim& n) const { return power_gain(table_, n.id, 1, n.freq); }

  void report(const ReportMessage& msg, double now) {
    ++result_.reports;
    for (const DistributeMessage& d : engine_->process_message(msg))
      push(QueuedEvent{now + delay_, 0, EventType::ApplyBound, static_cast<int>(d.node), 0,
                       d.bound});
  }

  void push(QueuedEvent ev) {
    ev.seq = seq_++;
    queue_.push(ev);
  }

  void sample(double now) {
    Milliwatts total = 0;
    for (const NodeSim& n : nodes_) {
      const NodePower& np = table_.node(n.id);
      total += n.running ? np.power(1, n.freq).value_or(0) : np.idle_power();
    }
    auto& trace = result_.power_trace;
    if (trace.empty() || trace.back().power != total) trace.push_back(PowerSample{now, total});
    result_.peak_power = std::max(result_.peak_power, total);

    if (total > cluster_bound_) {
      if (!open_violation_) open_violation_ = PowerViolation{now, now, total};
      open_violation_->peak = std::max(open_violation_->peak, total);
    } else if (open_violation_) {
      open_violation_->end = now;
      result_.violations.push_back(*open_violation_);
      open_violation_.reset();
    }
  }

  void log(double now, const NodeSim& n, int job, const char* kind) {
    result_.events.push_back(SimEvent{now, n.id, job, kind, n.bound, n.freq});
  }

  const DependencyGraph& graph_;
  const PowerTable& table_;
  Milliwatts cluster_bound_;
  SimMode mode_;
  const PowerMap* fixed_;
  double delay_ = 0.0;
  std::optional<PowerDistributor> engine_;

  std::vector<NodeSim> nodes_;
  std::vector<bool> finished_;
  std::priority_queue<QueuedEvent, std::vector<QueuedEvent>, LaterFirst> queue_;
  std::uint64_t seq_ = 0;
  std::optional<PowerViolation> open_violation_;
  SimResult result_;
};

}  // namespace

SimResult run_equal_share(const DependencyGraph& graph, const PowerTable& table,
                          Milliwatts cluster_bound) {
  const Milliwatts nominal = nominal_power_bound(cluster_bound, graph.node_count());
  for (int node = 1; node <= graph.node_count(); ++node)
    if (!table.node(node).max_frequency_under(nominal))
      throw InfeasibleError(
          fmt::format("nominal bound {} mW admits no frequency on node {}", nominal, node));
  const PowerMap bounds = PowerMap::uniform(graph.job_count(), nominal);
  return Simulation(graph, table, cluster_bound, SimMode::EqualShare, &bounds, nullptr).run();
}

SimResult run_with_assignment(const DependencyGraph& graph, const PowerTable& table,
                              const PowerMap& bounds, Milliwatts cluster_bound) {
  if (bounds.size() != graph.job_count())
    throw std::invalid_argument("assignment size does not match the graph");
  for (JobRef r = 0; r < graph.job_count(); ++r)
    if (!bounds.mapped(r))
      throw std::out_of_range(fmt::format("{} has no power bound", to_string(graph.job(r).id)));
  return Simulation(graph, table, cluster_bound, SimMode::Ilp, &bounds, nullptr).run();
}

SimResult run_ilp(const DependencyGraph& graph, const PowerTable& table, Milliwatts cluster_bound,
                  std::chrono::milliseconds time_limit) {
  const IlpInstance inst = build_instance(graph, table, cluster_bound);
  const Assignment a = solve_branch_and_bound(inst, time_limit);
  return run_with_assignment(graph, table, a.bounds, cluster_bound);
}

SimResult run_heuristic(const DependencyGraph& graph, const PowerTable& table, const SimConfig& cfg) {
  return Simulation(graph, table, cfg.cluster_bound, SimMode::Heuristic, nullptr, &cfg).run();
}

SimResult simulate(const DependencyGraph& graph, const PowerTable& table, const SimConfig& cfg) {
  switch (cfg.mode) {
    case SimMode::EqualShare: return run_equal_share(graph, table, cfg.cluster_bound);
    case SimMode::Ilp: return run_ilp(graph, table, cfg.cluster_bound, cfg.ilp_time_limit);
    case SimMode::Heuristic: return run_heuristic(graph, table, cfg);
  }
  throw std::invalid_argument("unknown simulation mode");
}

// ---------------------------------------------------------------------------
// Variance sweep

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

DependencyGraph with_nominal_times(const DependencyGraph& structure, const PowerTable& table,
                                   Milliwatts cluster_bound, const std::vector<double>& times) {
  const Milliwatts nominal = nominal_power_bound(cluster_bound, structure.node_count());
  std::vector<double> work(structure.job_count());
  for (JobRef r = 0; r < structure.job_count(); ++r) {
    const Job& job = structure.job(r);
    const NodePower& np = table.node(job.id.node);
    auto f = np.max_frequency_under(nominal);
    if (!f)
      throw InfeasibleError(fmt::format("nominal bound {} mW admits no frequency on node {}",
                                        nominal, job.id.node));
    // Invert time = work * (s / f_top + (1 - s) / f).
    const double s = job.serial_fraction;
    const double per_work = s / static_cast<double>(np.max_frequency()) +
                            (1.0 - s) / static_cast<double>(*f);
    work[r] = times.at(r) / per_work;
  }
  return structure.with_work(work);
}

SweepResult sweep_stddev(const DependencyGraph& structure, const PowerTable& table,
                         const SweepConfig& cfg) {
  if (!(cfg.mean > 0.0)) throw std::invalid_argument("mean must be positive");
  if (cfg.trials < 1) throw std::invalid_argument("at least one trial required");

  SweepResult out;
  out.cluster_bound = cfg.cluster_bound > 0
                          ? cfg.cluster_bound
                          : min_feasible_cluster_bound(table, structure.node_count());
  SimConfig hcfg;
  hcfg.cluster_bound = out.cluster_bound;
  hcfg.mode = SimMode::Heuristic;
  hcfg.budget_mode = cfg.budget_mode;
  hcfg.latency = cfg.latency;

  for (std::size_t si = 0; si < cfg.stddevs.size(); ++si) {
    const double sd = cfg.stddevs[si];
    if (sd < 0.0) throw std::invalid_argument("stddev must be non-negative");
    std::vector<double> ilp_speedups, heur_speedups;
    for (int trial = 0; trial < cfg.trials; ++trial) {
      std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                        static_cast<std::uint32_t>(si), static_cast<std::uint32_t>(trial)};
      std::mt19937_64 rng(seq);
      std::vector<double> times(structure.job_count(), cfg.mean);
      if (sd > 0.0) {
        std::normal_distribution<double> dist(cfg.mean, sd);
        for (double& t : times) t = std::max(dist(rng), 0.1 * cfg.mean);
      }
      const DependencyGraph g = with_nominal_times(structure, table, out.cluster_bound, times);

      SweepTrial tr;
      tr.stddev = sd;
      tr.trial = trial;
      tr.nominal_times = times;
      tr.equal_makespan = run_equal_share(g, table, out.cluster_bound).makespan;
      const IlpInstance inst = build_instance(g, table, out.cluster_bound);
      const Assignment a = solve_branch_and_bound(inst, cfg.ilp_time_limit);
      tr.ilp_objective = a.objective;
      tr.ilp_optimal = a.optimal;
      tr.ilp_makespan = run_with_assignment(g, table, a.bounds, out.cluster_bound).makespan;
      tr.heuristic_makespan = run_heuristic(g, table, hcfg).makespan;
      ilp_speedups.push_back(tr.equal_makespan / tr.ilp_makespan);
      heur_speedups.push_back(tr.equal_makespan / tr.heuristic_makespan);
      out.trials.push_back(std::move(tr));
    }
    out.rows.push_back(SweepRow{sd, SimMode::EqualShare, 1.0});
    out.rows.push_back(SweepRow{sd, SimMode::Ilp, median(ilp_speedups)});
    out.rows.push_back(SweepRow{sd, SimMode::Heuristic, median(heur_speedups)});
  }
  return out;
}

std::string SweepResult::csv() const {
  std::string out = "stddev,mode,median_speedup\n";
  for (const SweepRow& r : rows)
    out += fmt::format("{},{},{:.6f}\n", r.stddev, to_string(r.mode), r.median_speedup);
  return out;
}

}  // namespace pwrdist
