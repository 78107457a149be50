#include "pwrdist/depth.hpp"

#include <algorithm>
#include <functional>
#include <limits>

#include <fmt/format.h>

namespace pwrdist {

int DepthInfo::max_level() const {
  int best = 0;
  for (int d : max_depth) best = std::max(best, d);
  return best;
}

std::vector<int> max_depths(const DependencyGraph& graph) {
  std::vector<int> depth(graph.job_count(), 0);
  for (JobRef r : graph.topological_order())
    for (JobRef p : graph.predecessors(r)) depth[r] = std::max(depth[r], depth[p] + 1);
  return depth;
}

std::vector<DepthRange> depth_ranges(const DependencyGraph& graph, const std::vector<int>& depths) {
  std::vector<DepthRange> out(graph.job_count());
  for (JobRef r = 0; r < graph.job_count(); ++r) {
    int beta = std::numeric_limits<int>::max();
    for (JobRef s : graph.successors(r)) beta = std::min(beta, depths[s]);
    if (graph.successors(r).empty()) beta = depths[r] + 1;
    out[r] = DepthRange{depths[r], beta - 1};
  }
  return out;
}

DepthInfo analyze_depths(const DependencyGraph& graph) {
  DepthInfo info;
  info.max_depth = max_depths(graph);
  info.range = depth_ranges(graph, info.max_depth);
  info.beta.reserve(info.range.size());
  for (const DepthRange& r : info.range) info.beta.push_back(r.hi + 1);
  return info;
}

std::vector<std::vector<JobRef>> concurrency_sets(const std::vector<DepthRange>& ranges) {
  int top = 0;
  for (const DepthRange& r : ranges) top = std::max(top, r.hi);
  std::vector<std::vector<JobRef>> levels(ranges.empty() ? 0 : static_cast<std::size_t>(top) + 1);
  for (JobRef r = 0; r < ranges.size(); ++r)
    for (int d = ranges[r].lo; d <= ranges[r].hi; ++d) levels[d].push_back(r);
  return levels;
}

namespace {

std::string format_table(const DependencyGraph& graph, const std::string& title,
                         const std::function<std::string(JobRef)>& cell) {
  std::size_t rows = 0;
  for (int node = 1; node <= graph.node_count(); ++node)
    rows = std::max(rows, graph.node_jobs(node).size());

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{""};
  for (int node = 1; node <= graph.node_count(); ++node) header.push_back(fmt::format("Node {}", node));
  grid.push_back(header);
  for (std::size_t j = 0; j < rows; ++j) {
    std::vector<std::string> row{fmt::format("Job {}", j + 1)};
    for (int node = 1; node <= graph.node_count(); ++node) {
      auto seq = graph.node_jobs(node);
      row.push_back(j < seq.size() ? cell(seq[j]) : "-");
    }
    grid.push_back(row);
  }

  std::vector<std::size_t> width(grid[0].size(), 0);
  for (const auto& row : grid)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());

  std::string out = title + "\n";
  for (const auto& row : grid) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 1) line += " | ";
      else if (c > 1) line += "  ";
      line += fmt::format("{:<{}}", row[c], width[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

}  // namespace

std::string format_depth_tables(const DependencyGraph& graph, const DepthInfo& info) {
  std::string out = format_table(graph, "Max-depths",
                                 [&](JobRef r) { return std::to_string(info.max_depth[r]); });
  out += "\n";
  out += format_table(graph, "Depth ranges", [&](JobRef r) {
    return fmt::format("[{},{}]", info.range[r].lo, info.range[r].hi);
  });
  return out;
}

std::string format_depth_csv(const DependencyGraph& graph, const DepthInfo& info) {
  std::string out = "node,job,delta,range_lo,range_hi\n";
  for (JobRef r = 0; r < graph.job_count(); ++r) {
    const JobId& id = graph.job(r).id;
    out += fmt::format("{},{},{},{},{}\n", id.node, id.index, info.max_depth[r], info.range[r].lo,
                       info.range[r].hi);
  }
  return out;
}

}  // namespace pwrdist
