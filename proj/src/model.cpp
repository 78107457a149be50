#include "pwrdist/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <queue>
#include <set>
#include <tuple>
#include <sstream>

#include <fmt/format.h>

#include "text_util.hpp"

namespace pwrdist {

std::string to_string(const JobId& id) { return fmt::format("J({},{})", id.node, id.index); }

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("line {}: {}", line, what)), line_(line) {}

ValidationError::ValidationError(const std::string& what, std::size_t line)
    : std::runtime_error(line == 0 ? what : fmt::format("line {}: {}", line, what)), line_(line) {}

// ---------------------------------------------------------------------------
// DependencyGraph

std::optional<JobRef> DependencyGraph::find(JobId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

JobRef DependencyGraph::ref(JobId id) const {
  auto found = find(id);
  if (!found) throw std::out_of_range("unknown job " + to_string(id));
  return *found;
}

std::vector<JobRef> DependencyGraph::initial_jobs() const {
  std::vector<JobRef> out;
  for (JobRef r = 0; r < jobs_.size(); ++r)
    if (preds_[r].empty()) out.push_back(r);
  return out;
}

std::vector<JobRef> DependencyGraph::final_jobs() const {
  std::vector<JobRef> out;
  for (JobRef r = 0; r < jobs_.size(); ++r)
    if (succs_[r].empty()) out.push_back(r);
  return out;
}

DependencyGraph DependencyGraph::with_work(std::span<const double> work) const {
  if (work.size() != jobs_.size()) throw std::invalid_argument("one work value per job required");
  DependencyGraph g = *this;
  for (JobRef r = 0; r < jobs_.size(); ++r) {
    if (!(work[r] > 0.0) || !std::isfinite(work[r]))
      throw ValidationError(fmt::format("job {} must have positive work", to_string(jobs_[r].id)));
    g.jobs_[r].work = work[r];
  }
  return g;
}

// ---------------------------------------------------------------------------
// GraphBuilder

GraphBuilder::GraphBuilder(int node_count) : node_count_(node_count) {
  if (node_count < 1) throw ValidationError("node count must be at least 1");
}

GraphBuilder& GraphBuilder::add_job(JobId id, double work, double serial_fraction,
                                    std::size_t line) {
  jobs_.push_back(Job{id, work, serial_fraction});
  job_lines_.push_back(line);
  return *this;
}

GraphBuilder& GraphBuilder::add_dependency(JobId target, JobId source, std::size_t line) {
  deps_.push_back(PendingDep{target, source, line});
  return *this;
}

namespace {

// Finds one cycle among jobs that Kahn's algorithm could not order.
std::vector<JobRef> find_cycle(const std::vector<std::vector<JobRef>>& succs,
                               const std::vector<bool>& ordered) {
  const std::size_t n = succs.size();
  std::vector<int> color(n, 0);  // 0 white, 1 on stack, 2 done
  std::vector<JobRef> stack;
  std::vector<JobRef> cycle;

  std::function<bool(JobRef)> dfs = [&](JobRef u) {
    color[u] = 1;
    stack.push_back(u);
    for (JobRef v : succs[u]) {
      if (ordered[v]) continue;
      if (color[v] == 1) {
        auto it = std::find(stack.begin(), stack.end(), v);
        cycle.assign(it, stack.end());
        cycle.push_back(v);
        return true;
      }
      if (color[v] == 0 && dfs(v)) return true;
    }
    stack.pop_back();
    color[u] = 2;
    return false;
  };

  for (JobRef r = 0; r < n; ++r)
    if (!ordered[r] && color[r] == 0 && dfs(r)) break;
  return cycle;
}

}  // namespace

DependencyGraph GraphBuilder::build() const {
  DependencyGraph g;
  g.node_count_ = node_count_;

  // Dense refs follow (node, index) order regardless of insertion order.
  std::vector<std::size_t> order(jobs_.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return jobs_[a].id < jobs_[b].id; });

  std::map<JobId, std::size_t> line_of;
  for (std::size_t k : order) {
    const Job& job = jobs_[k];
    const std::size_t line = job_lines_[k];
    if (job.id.node < 1 || job.id.node > node_count_)
      throw ValidationError(fmt::format("job {} names node outside 1..{}", to_string(job.id),
                                        node_count_),
                            line);
    if (job.id.index < 1)
      throw ValidationError(fmt::format("job {} has index < 1", to_string(job.id)), line);
    if (!(job.work > 0.0) || !std::isfinite(job.work))
      throw ValidationError(fmt::format("job {} must have positive work", to_string(job.id)),
                            line);
    if (!(job.serial_fraction >= 0.0 && job.serial_fraction <= 1.0))
      throw ValidationError(
          fmt::format("job {} serial fraction must lie in [0,1]", to_string(job.id)), line);
    if (!g.index_.emplace(job.id, g.jobs_.size()).second)
      throw ValidationError(fmt::format("duplicate job {}", to_string(job.id)), line);
    line_of[job.id] = line;
    g.jobs_.push_back(job);
  }

  const std::size_t n = g.jobs_.size();
  g.node_jobs_.assign(static_cast<std::size_t>(node_count_), {});
  for (JobRef r = 0; r < n; ++r) g.node_jobs_[g.jobs_[r].id.node - 1].push_back(r);
  for (int node = 1; node <= node_count_; ++node) {
    const auto& seq = g.node_jobs_[node - 1];
    if (seq.empty()) throw ValidationError(fmt::format("node {} has no jobs", node));
    for (std::size_t k = 0; k < seq.size(); ++k) {
      const JobId& id = g.jobs_[seq[k]].id;
      if (id.index != static_cast<int>(k) + 1)
        throw ValidationError(fmt::format("job {} has no serial predecessor J({},{})",
                                          to_string(id), node, static_cast<int>(k) + 1),
                              line_of[id]);
    }
  }

  std::vector<std::set<JobRef>> preds(n);
  std::vector<std::map<JobRef, std::size_t>> dep_lines(n);
  for (const auto& seq : g.node_jobs_)
    for (std::size_t k = 1; k < seq.size(); ++k) preds[seq[k]].insert(seq[k - 1]);
  for (const PendingDep& dep : deps_) {
    auto target = g.find(dep.target);
    auto source = g.find(dep.source);
    if (!target)
      throw ValidationError(fmt::format("dependency names unknown job {}", to_string(dep.target)),
                            dep.line);
    if (!source)
      throw ValidationError(fmt::format("dependency names unknown job {}", to_string(dep.source)),
                            dep.line);
    if (*target == *source)
      throw ValidationError(fmt::format("cycle: {} depends on itself", to_string(dep.target)),
                            dep.line);
    preds[*target].insert(*source);
    dep_lines[*target].emplace(*source, dep.line);
  }

  // A job may depend on at most one job of any other node.
  for (JobRef r = 0; r < n; ++r) {
    std::map<int, JobRef> per_node;
    for (JobRef p : preds[r]) {
      const int pn = g.jobs_[p].id.node;
      if (pn == g.jobs_[r].id.node) continue;
      auto [it, fresh] = per_node.emplace(pn, p);
      if (!fresh) {
        auto line_it = dep_lines[r].find(p);
        throw ValidationError(
            fmt::format("job {} depends on both {} and {} of node {}", to_string(g.jobs_[r].id),
                        to_string(g.jobs_[it->second].id), to_string(g.jobs_[p].id), pn),
            line_it == dep_lines[r].end() ? 0 : line_it->second);
      }
    }
  }

  g.preds_.assign(n, {});
  g.succs_.assign(n, {});
  for (JobRef r = 0; r < n; ++r) {
    g.preds_[r].assign(preds[r].begin(), preds[r].end());
    for (JobRef p : preds[r]) g.succs_[p].push_back(r);
    g.edge_count_ += preds[r].size();
  }
  for (auto& s : g.succs_) std::sort(s.begin(), s.end());

  // Kahn with a min-heap keeps the order stable.
  std::vector<std::size_t> indeg(n);
  std::priority_queue<JobRef, std::vector<JobRef>, std::greater<>> ready;
  for (JobRef r = 0; r < n; ++r) {
    indeg[r] = g.preds_[r].size();
    if (indeg[r] == 0) ready.push(r);
  }
  std::vector<bool> ordered(n, false);
  while (!ready.empty()) {
    JobRef u = ready.top();
    ready.pop();
    ordered[u] = true;
    g.topo_.push_back(u);
    for (JobRef v : g.succs_[u])
      if (--indeg[v] == 0) ready.push(v);
  }
  if (g.topo_.size() != n) {
    auto cycle = find_cycle(g.succs_, ordered);
    std::string path;
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      if (k) path += " -> ";
      path += to_string(g.jobs_[cycle[k]].id);
    }
    throw ValidationError("cycle: " + path);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Graph text format

DependencyGraph parse_graph(std::string_view text) {
  std::optional<GraphBuilder> builder;
  std::size_t line_no = 0;
  for (std::string_view line : detail::split_lines(text)) {
    ++line_no;
    auto tokens = detail::tokenize(detail::strip_comment(line));
    if (tokens.empty()) continue;
    const std::string_view kw = tokens[0];

    auto int_at = [&](std::size_t k) {
      auto v = detail::parse_int(tokens[k]);
      if (!v) throw ParseError(line_no, fmt::format("expected integer, got '{}'", tokens[k]));
      return static_cast<int>(*v);
    };
    auto num_at = [&](std::size_t k) {
      auto v = detail::parse_double(tokens[k]);
      if (!v) throw ParseError(line_no, fmt::format("expected number, got '{}'", tokens[k]));
      return *v;
    };

    if (kw == "nodes") {
      if (builder) throw ParseError(line_no, "duplicate 'nodes' declaration");
      if (tokens.size() != 2) throw ParseError(line_no, "usage: nodes <n>");
      const int n = int_at(1);
      if (n < 1) throw ParseError(line_no, "node count must be at least 1");
      builder.emplace(n);
    } else if (kw == "job") {
      if (!builder) throw ParseError(line_no, "'job' before 'nodes'");
      if (tokens.size() != 4 && tokens.size() != 5)
        throw ParseError(line_no, "usage: job <node_id> <job_index> <work> [serial_fraction]");
      const double sf = tokens.size() == 5 ? num_at(4) : 0.0;
      builder->add_job(JobId{int_at(1), int_at(2)}, num_at(3), sf, line_no);
    } else if (kw == "dep") {
      if (!builder) throw ParseError(line_no, "'dep' before 'nodes'");
      if (tokens.size() != 6 || tokens[3] != "<-")
        throw ParseError(line_no, "usage: dep <node_id> <job_index> <- <node_id> <job_index>");
      builder->add_dependency(JobId{int_at(1), int_at(2)}, JobId{int_at(4), int_at(5)}, line_no);
    } else {
      throw ParseError(line_no, fmt::format("unknown directive '{}'", kw));
    }
  }
  if (!builder) throw ParseError(line_no == 0 ? 1 : line_no, "missing 'nodes' declaration");
  return builder->build();
}

DependencyGraph load_graph(const std::string& path) {
  return parse_graph(detail::read_file(path));
}

std::string format_graph(const DependencyGraph& graph) {
  std::string out = fmt::format("nodes {}\n", graph.node_count());
  for (const Job& job : graph.jobs()) {
    out += fmt::format("job {} {} {}", job.id.node, job.id.index, job.work);
    if (job.serial_fraction != 0.0) out += fmt::format(" {}", job.serial_fraction);
    out += '\n';
  }
  for (JobRef r = 0; r < graph.job_count(); ++r) {
    const JobId& t = graph.job(r).id;
    for (JobRef p : graph.predecessors(r)) {
      const JobId& s = graph.job(p).id;
      if (s.node == t.node && s.index + 1 == t.index) continue;  // implicit
      out += fmt::format("dep {} {} <- {} {}\n", t.node, t.index, s.node, s.index);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Power tables

NodePower::NodePower(Milliwatts idle_mw, std::vector<PowerEntry> entries)
    : idle_mw_(idle_mw), entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(), [](const PowerEntry& a, const PowerEntry& b) {
    return std::tie(a.cores, a.freq_mhz) < std::tie(b.cores, b.freq_mhz);
  });
  if (idle_mw_ < 0) throw ValidationError("idle power must be non-negative");
  bool single_core = false;
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const PowerEntry& e = entries_[k];
    if (e.cores < 1) throw ValidationError("active cores must be at least 1");
    if (e.freq_mhz <= 0) throw ValidationError("frequencies must be positive");
    if (e.power_mw <= idle_mw_)
      throw ValidationError(fmt::format("power {} mW at {} MHz does not exceed idle power {} mW",
                                        e.power_mw, e.freq_mhz, idle_mw_));
    if (k > 0 && entries_[k - 1].cores == e.cores) {
      if (entries_[k - 1].freq_mhz == e.freq_mhz)
        throw ValidationError(
            fmt::format("duplicate entry for {} cores at {} MHz", e.cores, e.freq_mhz));
      if (entries_[k - 1].power_mw >= e.power_mw)
        throw ValidationError(fmt::format(
            "power must strictly increase with frequency ({} cores, {} MHz)", e.cores,
            e.freq_mhz));
    }
    single_core = single_core || e.cores == 1;
  }
  if (!single_core) throw ValidationError("power profile has no single-core entries");
}

std::vector<Megahertz> NodePower::frequencies(int cores) const {
  std::vector<Megahertz> out;
  for (const PowerEntry& e : entries_)
    if (e.cores == cores) out.push_back(e.freq_mhz);
  return out;
}

std::optional<Milliwatts> NodePower::power(int cores, Megahertz freq) const {
  for (const PowerEntry& e : entries_)
    if (e.cores == cores && e.freq_mhz == freq) return e.power_mw;
  return std::nullopt;
}

std::optional<Megahertz> NodePower::max_frequency_under(Milliwatts bound) const {
  std::optional<Megahertz> best;
  for (const PowerEntry& e : entries_)
    if (e.cores == 1 && e.power_mw <= bound) best = e.freq_mhz;
  return best;
}

Megahertz NodePower::max_frequency() const {
  Megahertz best = 0;
  for (const PowerEntry& e : entries_)
    if (e.cores == 1) best = std::max(best, e.freq_mhz);
  return best;
}

Milliwatts NodePower::min_operating_power() const {
  for (const PowerEntry& e : entries_)
    if (e.cores == 1) return e.power_mw;
  throw std::logic_error("power profile has no single-core entries");
}

void PowerTable::set_node(int node, NodePower power) { nodes_[node] = std::move(power); }
void PowerTable::set_default(NodePower power) { default_ = std::move(power); }

bool PowerTable::has_node(int node) const { return nodes_.count(node) || default_.has_value(); }

const NodePower& PowerTable::node(int node) const {
  auto it = nodes_.find(node);
  if (it != nodes_.end()) return it->second;
  if (default_) return *default_;
  throw std::out_of_range(fmt::format("power table has no entry for node {}", node));
}

PowerTable parse_power_table(std::string_view csv) {
  struct Pending {
    std::optional<Milliwatts> idle;
    std::vector<PowerEntry> entries;
    std::size_t first_line = 0;
  };
  std::map<std::string, Pending> rows;  // key: node token ("*" = default)
  bool header = false;
  std::size_t line_no = 0;
  for (std::string_view raw : detail::split_lines(csv)) {
    ++line_no;
    std::string_view line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    auto cells = detail::split(line, ',');
    for (auto& c : cells) c = detail::trim(c);
    if (!header) {
      if (cells.size() != 4 || cells[0] != "node" || cells[1] != "cores" ||
          cells[2] != "freq_mhz" || cells[3] != "power_mw")
        throw ParseError(line_no, "expected header 'node,cores,freq_mhz,power_mw'");
      header = true;
      continue;
    }
    if (cells.size() != 4) throw ParseError(line_no, "expected 4 columns");
    std::string key(cells[0]);
    if (key != "*") {
      auto node = detail::parse_int(cells[0]);
      if (!node || *node < 1) throw ParseError(line_no, "node must be a positive integer or '*'");
      key = std::to_string(*node);
    }
    Pending& p = rows[key];
    if (p.first_line == 0) p.first_line = line_no;
    auto power = detail::parse_int(cells[3]);
    if (!power) throw ParseError(line_no, "power_mw must be an integer");
    if (cells[1] == "idle") {
      if (!cells[2].empty()) throw ParseError(line_no, "idle rows leave freq_mhz empty");
      if (p.idle) throw ParseError(line_no, "duplicate idle row");
      p.idle = *power;
      continue;
    }
    auto cores = detail::parse_int(cells[1]);
    auto freq = detail::parse_int(cells[2]);
    if (!cores) throw ParseError(line_no, "cores must be an integer or 'idle'");
    if (!freq) throw ParseError(line_no, "freq_mhz must be an integer");
    p.entries.push_back(PowerEntry{static_cast<int>(*cores), *freq, *power});
  }
  if (!header) throw ParseError(1, "empty power table");

  PowerTable table;
  for (auto& [key, p] : rows) {
    if (!p.idle) throw ParseError(p.first_line, fmt::format("node {} has no idle row", key));
    try {
      NodePower np(*p.idle, std::move(p.entries));
      if (key == "*")
        table.set_default(std::move(np));
      else
        table.set_node(std::stoi(key), std::move(np));
    } catch (const ValidationError& e) {
      throw ParseError(p.first_line, fmt::format("node {}: {}", key, e.what()));
    }
  }
  return table;
}

PowerTable load_power_table(const std::string& path) {
  return parse_power_table(detail::read_file(path));
}

std::vector<Milliwatts> power_bounds(const PowerTable& table, int node) {
  std::vector<Milliwatts> out;
  for (const PowerEntry& e : table.node(node).entries())
    if (e.cores == 1) out.push_back(e.power_mw);
  return out;
}

// ---------------------------------------------------------------------------
// Execution time

double job_time_at(const Job& job, Megahertz freq, Megahertz top_freq) {
  const double s = job.serial_fraction;
  if (s == 0.0) return job.work / static_cast<double>(freq);
  return job.work * (s / static_cast<double>(top_freq) + (1.0 - s) / static_cast<double>(freq));
}

double execution_time(const Job& job, Milliwatts bound, const PowerTable& table) {
  const NodePower& np = table.node(job.id.node);
  auto freq = np.max_frequency_under(bound);
  if (!freq)
    throw InfeasibleError(fmt::format("bound {} mW is below the minimum operating power {} mW of node {}",
                                      bound, np.min_operating_power(), job.id.node));
  return job_time_at(job, *freq, np.max_frequency());
}

PowerMap PowerMap::uniform(std::size_t job_count, Milliwatts bound) {
  PowerMap m(job_count);
  for (auto& b : m.bounds_) b = bound;
  return m;
}

Milliwatts PowerMap::at(JobRef ref) const {
  if (!mapped(ref)) throw std::out_of_range(fmt::format("job ref {} has no power bound", ref));
  return *bounds_[ref];
}

bool PowerMap::complete() const {
  return std::all_of(bounds_.begin(), bounds_.end(), [](const auto& b) { return b.has_value(); });
}

double path_time(const DependencyGraph& graph, std::span<const JobRef> path, const PowerMap& bounds,
                 const PowerTable& table) {
  double total = 0.0;
  for (std::size_t l = 0; l < path.size(); ++l) {
    if (l > 0) {
      auto preds = graph.predecessors(path[l]);
      if (!std::binary_search(preds.begin(), preds.end(), path[l - 1]))
        throw std::invalid_argument(fmt::format("{} does not depend on {}",
                                                to_string(graph.job(path[l]).id),
                                                to_string(graph.job(path[l - 1]).id)));
    }
    total += execution_time(graph.job(path[l]), bounds.at(path[l]), table);
  }
  return total;
}

double longest_path(const DependencyGraph& graph, std::span<const double> durations) {
  if (durations.size() != graph.job_count())
    throw std::invalid_argument("one duration per job required");
  std::vector<double> finish(graph.job_count(), 0.0);
  double best = 0.0;
  for (JobRef r : graph.topological_order()) {
    double start = 0.0;
    for (JobRef p : graph.predecessors(r)) start = std::max(start, finish[p]);
    finish[r] = start + durations[r];
    best = std::max(best, finish[r]);
  }
  return best;
}

double total_execution_time(const DependencyGraph& graph, const PowerMap& bounds,
                            const PowerTable& table) {
  std::vector<double> durations(graph.job_count());
  for (JobRef r = 0; r < graph.job_count(); ++r)
    durations[r] = execution_time(graph.job(r), bounds.at(r), table);
  return longest_path(graph, durations);
}

Milliwatts nominal_power_bound(Milliwatts cluster_bound, int node_count) {
  if (node_count <= 0) throw std::invalid_argument("node count must be positive");
  return cluster_bound / node_count;
}

Milliwatts min_feasible_cluster_bound(const PowerTable& table, int node_count) {
  if (node_count <= 0) throw std::invalid_argument("node count must be positive");
  Milliwatts worst = 0;
  for (int node = 1; node <= node_count; ++node)
    worst = std::max(worst, table.node(node).min_operating_power());
  return worst * node_count;
}

}  // namespace pwrdist
