#include "pwrdist/ilp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace pwrdist {

PowerBoundSet power_bound_set(const PowerTable& table, int node_count) {
  PowerBoundSet out;
  for (int node = 1; node <= node_count; ++node) out[node] = power_bounds(table, node);
  return out;
}

IlpInstance build_instance(const DependencyGraph& graph, const std::vector<DepthRange>& ranges,
                           const PowerBoundSet& bounds, const PowerTable& table,
                           Milliwatts cluster_bound) {
  if (ranges.size() != graph.job_count()) throw std::invalid_argument("one depth range per job");

  IlpInstance inst;
  inst.node_count = graph.node_count();
  inst.cluster_bound = cluster_bound;

  for (int node = 1; node <= graph.node_count(); ++node) {
    auto it = bounds.find(node);
    if (it == bounds.end() || it->second.empty())
      throw std::invalid_argument(fmt::format("no candidate power bounds for node {}", node));
    if (!std::is_sorted(it->second.begin(), it->second.end()))
      throw std::invalid_argument(fmt::format("power bounds of node {} are not ascending", node));
    if (it->second.front() > cluster_bound)
      throw InfeasibleError(fmt::format(
          "node {} needs at least {} mW but the cluster bound is {} mW", node,
          it->second.front(), cluster_bound));
  }

  inst.jobs.resize(graph.job_count());
  for (JobRef r = 0; r < graph.job_count(); ++r) {
    const Job& job = graph.job(r);
    inst.job_ids.push_back(job.id);
    const NodePower& np = table.node(job.id.node);
    JobChoices& jc = inst.jobs[r];
    jc.job = r;
    jc.node = job.id.node;
    jc.range = ranges[r];

    IlpRow row;
    row.name = fmt::format("assign_{}_{}", job.id.node, job.id.index);
    row.sense = RowSense::Equal;
    row.rhs = 1.0;
    for (Milliwatts b : bounds.at(job.id.node)) {
      auto freq = np.max_frequency_under(b);
      if (!freq)
        throw InfeasibleError(fmt::format("bound {} mW admits no frequency on node {}", b,
                                          job.id.node));
      const std::size_t var = inst.variables.size();
      inst.variables.push_back(IlpVariable{
          r, b, *freq, job_time_at(job, *freq, np.max_frequency()),
          fmt::format("x_{}_{}_{}", job.id.node, job.id.index, b)});
      jc.vars.push_back(var);
      row.terms.push_back(IlpTerm{var, 1.0});
    }
    inst.assignment_rows.push_back(std::move(row));
  }

  auto levels = concurrency_sets(ranges);
  for (std::size_t d = 0; d < levels.size(); ++d) {
    IlpRow row;
    row.name = fmt::format("power_d{}", d);
    row.rhs = static_cast<double>(cluster_bound);
    for (JobRef r : levels[d])
      for (std::size_t var : inst.jobs[r].vars)
        row.terms.push_back(IlpTerm{var, static_cast<double>(inst.variables[var].bound)});
    inst.power_rows.push_back(std::move(row));
  }

  for (int node = 1; node <= graph.node_count(); ++node) {
    IlpRow row;
    row.name = fmt::format("makespan_n{}", node);
    row.t_coef = -1.0;
    for (JobRef r : graph.node_jobs(node))
      for (std::size_t var : inst.jobs[r].vars)
        row.terms.push_back(IlpTerm{var, inst.variables[var].time});
    inst.makespan_rows.push_back(std::move(row));
  }
  return inst;
}

IlpInstance build_instance(const DependencyGraph& graph, const PowerTable& table,
                           Milliwatts cluster_bound) {
  auto ranges = depth_ranges(graph, max_depths(graph));
  return build_instance(graph, ranges, power_bound_set(table, graph.node_count()), table,
                        cluster_bound);
}

// ---------------------------------------------------------------------------
// LP export

namespace {

std::string lp_number(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) return fmt::format("{}", static_cast<long long>(v));
  return fmt::format("{:.17g}", v);
}

void append_row(std::string& out, const IlpInstance& inst, const IlpRow& row) {
  std::string line = fmt::format(" {}:", row.name);
  bool first = true;
  for (const IlpTerm& term : row.terms) {
    const std::string& name = inst.variables[term.var].name;
    std::string piece;
    if (term.coef == 1.0)
      piece = name;
    else
      piece = lp_number(term.coef) + " " + name;
    line += first ? " " + piece : " + " + piece;
    first = false;
    if (line.size() > 200) {  // LP readers cap line length
      out += line + "\n";
      line = "  ";
      first = false;
    }
  }
  if (row.t_coef != 0.0) line += row.t_coef < 0 ? " - t" : " + t";
  line += row.sense == RowSense::Equal ? " = " : " <= ";
  line += lp_number(row.rhs);
  out += line + "\n";
}

}  // namespace

std::string export_lp(const IlpInstance& inst) {
  std::string out;
  out += fmt::format("\\ power-bound assignment: {} jobs, {} nodes, cluster bound {} mW\n",
                     inst.jobs.size(), inst.node_count, inst.cluster_bound);
  out += "Minimize\n obj: t\nSubject To\n";
  for (const IlpRow& row : inst.assignment_rows) append_row(out, inst, row);
  for (const IlpRow& row : inst.power_rows) append_row(out, inst, row);
  for (const IlpRow& row : inst.makespan_rows) append_row(out, inst, row);
  out += "Bounds\n t >= 0\nBinaries\n";
  for (const IlpVariable& v : inst.variables) out += " " + v.name + "\n";
  out += "End\n";
  return out;
}

// ---------------------------------------------------------------------------
// Solvers

bool is_feasible(const IlpInstance& inst, const std::vector<std::size_t>& choice) {
  if (choice.size() != inst.jobs.size()) return false;
  std::vector<Milliwatts> used(inst.power_rows.size(), 0);
  for (std::size_t r = 0; r < inst.jobs.size(); ++r) {
    const JobChoices& jc = inst.jobs[r];
    if (std::find(jc.vars.begin(), jc.vars.end(), choice[r]) == jc.vars.end()) return false;
    for (int d = jc.range.lo; d <= jc.range.hi; ++d) used[d] += inst.variables[choice[r]].bound;
  }
  return std::all_of(used.begin(), used.end(),
                     [&](Milliwatts u) { return u <= inst.cluster_bound; });
}

double objective_of(const IlpInstance& inst, const std::vector<std::size_t>& choice) {
  // Per-node sums accumulate in job-index order, the same order the solver uses.
  std::vector<double> node_time(inst.node_count, 0.0);
  for (std::size_t r = 0; r < inst.jobs.size(); ++r)
    node_time[inst.jobs[r].node - 1] += inst.variables[choice[r]].time;
  return node_time.empty() ? 0.0 : *std::max_element(node_time.begin(), node_time.end());
}

namespace {

// Branching order: (max-depth, node, job index).
std::vector<JobRef> branching_order(const IlpInstance& inst) {
  std::vector<JobRef> order(inst.jobs.size());
  std::iota(order.begin(), order.end(), JobRef{0});
  std::stable_sort(order.begin(), order.end(), [&](JobRef a, JobRef b) {
    const JobChoices& ja = inst.jobs[a];
    const JobChoices& jb = inst.jobs[b];
    if (ja.range.lo != jb.range.lo) return ja.range.lo < jb.range.lo;
    if (ja.node != jb.node) return ja.node < jb.node;
    return inst.job_ids[a].index < inst.job_ids[b].index;
  });
  return order;
}

Assignment make_assignment(const IlpInstance& inst, const std::vector<std::size_t>& choice) {
  Assignment a;
  a.bounds = PowerMap(inst.jobs.size());
  a.choice = choice;
  for (std::size_t r = 0; r < choice.size(); ++r) a.bounds.set(r, inst.variables[choice[r]].bound);
  a.objective = objective_of(inst, choice);
  return a;
}

class BranchAndBound {
 public:
  BranchAndBound(const IlpInstance& inst, std::chrono::milliseconds limit)
      : inst_(inst), order_(branching_order(inst)), limit_(limit) {
    const std::size_t levels = inst.power_rows.size();
    used_.assign(levels, 0);
    min_remaining_.assign(levels, 0);
    node_time_.assign(inst.node_count, 0.0);
    fast_remaining_.assign(inst.node_count, 0.0);
    choice_.assign(inst.jobs.size(), 0);

    for (const JobChoices& jc : inst.jobs) {
      const Milliwatts lo = inst.variables[jc.vars.front()].bound;
      for (int d = jc.range.lo; d <= jc.range.hi; ++d) min_remaining_[d] += lo;
    }
    // Fastest time each job could take if every other job in its levels sat
    // at its own minimum bound.
    fastest_.assign(inst.jobs.size(), 0.0);
    for (const JobChoices& jc : inst.jobs) {
      const Milliwatts own_min = inst.variables[jc.vars.front()].bound;
      Milliwatts headroom = std::numeric_limits<Milliwatts>::max();
      for (int d = jc.range.lo; d <= jc.range.hi; ++d)
        headroom = std::min(headroom, inst.cluster_bound - (min_remaining_[d] - own_min));
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t var : jc.vars)
        if (inst.variables[var].bound <= headroom) best = std::min(best, inst.variables[var].time);
      if (!std::isfinite(best)) best = inst.variables[jc.vars.front()].time;
      fastest_[jc.job] = best;
      fast_remaining_[jc.node - 1] += best;
    }
    for (std::size_t d = 0; d < levels; ++d)
      if (min_remaining_[d] > inst.cluster_bound) root_infeasible_ = true;
  }

  Assignment run() {
    start_ = std::chrono::steady_clock::now();
    root_lb_ = lower_bound();
    if (!root_infeasible_) descend(0);
    if (!found_) {
      if (timed_out_) throw InfeasibleError("time limit reached before any feasible assignment");
      throw InfeasibleError("no power-bound assignment satisfies every depth-level power row");
    }
    Assignment a = make_assignment(inst_, best_choice_);
    a.optimal = !timed_out_;
    a.lower_bound = timed_out_ ? root_lb_ : a.objective;
    a.nodes_explored = explored_;
    return a;
  }

 private:
  double lower_bound() const {
    double lb = 0.0;
    for (std::size_t i = 0; i < node_time_.size(); ++i)
      lb = std::max(lb, node_time_[i] + fast_remaining_[i]);
    return lb;
  }

  bool prunable(double lb) const {
    // Slack absorbs rounding in lb so that strictly better leaves are never cut.
    return found_ && lb > best_ + 1e-9 * std::max(1.0, std::abs(best_));
  }

  void descend(std::size_t depth) {
    if (timed_out_) return;
    if ((++explored_ & 1023) == 0 && limit_.count() > 0 &&
        std::chrono::steady_clock::now() - start_ > limit_) {
      timed_out_ = true;
      return;
    }
    if (depth == order_.size()) {
      double t = 0.0;
      for (double v : node_time_) t = std::max(t, v);
      if (!found_ || t < best_) {
        found_ = true;
        best_ = t;
        best_choice_ = choice_;
      }
      return;
    }

    const JobRef r = order_[depth];
    const JobChoices& jc = inst_.jobs[r];
    const std::size_t node = static_cast<std::size_t>(jc.node - 1);
    const Milliwatts own_min = inst_.variables[jc.vars.front()].bound;

    for (auto it = jc.vars.rbegin(); it != jc.vars.rend(); ++it) {
      const IlpVariable& var = inst_.variables[*it];
      bool fits = true;
      for (int d = jc.range.lo; d <= jc.range.hi && fits; ++d)
        fits = used_[d] + var.bound + (min_remaining_[d] - own_min) <= inst_.cluster_bound;
      if (!fits) continue;

      const double saved_time = node_time_[node];
      const double saved_fast = fast_remaining_[node];
      for (int d = jc.range.lo; d <= jc.range.hi; ++d) {
        used_[d] += var.bound;
        min_remaining_[d] -= own_min;
      }
      node_time_[node] = saved_time + var.time;
      fast_remaining_[node] = saved_fast - fastest_[r];
      choice_[r] = *it;

      if (!prunable(lower_bound())) descend(depth + 1);

      for (int d = jc.range.lo; d <= jc.range.hi; ++d) {
        used_[d] -= var.bound;
        min_remaining_[d] += own_min;
      }
      node_time_[node] = saved_time;
      fast_remaining_[node] = saved_fast;
      if (timed_out_) return;
    }
  }

  const IlpInstance& inst_;
  std::vector<JobRef> order_;
  std::chrono::milliseconds limit_;
  std::chrono::steady_clock::time_point start_;

  std::vector<Milliwatts> used_;
  std::vector<Milliwatts> min_remaining_;
  std::vector<double> node_time_;
  std::vector<double> fast_remaining_;
  std::vector<double> fastest_;
  std::vector<std::size_t> choice_;

  bool root_infeasible_ = false;
  bool found_ = false;
  bool timed_out_ = false;
  double best_ = 0.0;
  double root_lb_ = 0.0;
  std::vector<std::size_t> best_choice_;
  std::size_t explored_ = 0;
};

}  // namespace

Assignment solve_branch_and_bound(const IlpInstance& inst, std::chrono::milliseconds time_limit) {
  return BranchAndBound(inst, time_limit).run();
}

Assignment exhaustive_oracle(const IlpInstance& inst) {
  const auto order = branching_order(inst);
  double combos = 1.0;
  for (const JobChoices& jc : inst.jobs) combos *= static_cast<double>(jc.vars.size());
  if (combos > 1e7) throw std::length_error("instance too large for exhaustive enumeration");

  // Odometer over jobs in branching order; digit 0 is the largest bound.
  std::vector<std::size_t> digit(order.size(), 0);
  std::vector<std::size_t> choice(inst.jobs.size());
  bool found = false;
  double best = 0.0;
  std::vector<std::size_t> best_choice;
  std::size_t explored = 0;
  for (;;) {
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& vars = inst.jobs[order[k]].vars;
      choice[order[k]] = vars[vars.size() - 1 - digit[k]];
    }
    ++explored;
    if (is_feasible(inst, choice)) {
      const double t = objective_of(inst, choice);
      if (!found || t < best) {
        found = true;
        best = t;
        best_choice = choice;
      }
    }
    bool done = true;
    for (std::size_t k = order.size(); k-- > 0;) {
      if (++digit[k] < inst.jobs[order[k]].vars.size()) {
        done = false;
        break;
      }
      digit[k] = 0;
    }
    if (done) break;
  }
  if (!found) throw InfeasibleError("no power-bound assignment satisfies every depth-level power row");
  Assignment a = make_assignment(inst, best_choice);
  a.optimal = true;
  a.lower_bound = a.objective;
  a.nodes_explored = explored;
  return a;
}

std::string format_assignment_csv(const IlpInstance& inst, const Assignment& a) {
  std::string out = "node,job,bound_mw,freq_mhz,time\n";
  for (std::size_t r = 0; r < inst.jobs.size(); ++r) {
    const IlpVariable& v = inst.variables[a.choice[r]];
    out += fmt::format("{},{},{},{},{}\n", inst.job_ids[r].node, inst.job_ids[r].index, v.bound,
                       v.freq, v.time);
  }
  return out;
}

}  // namespace pwrdist
