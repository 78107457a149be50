#pragma once

#include <string>
#include <vector>

#include "pwrdist/model.hpp"

namespace pwrdist {

/// Inclusive interval of depth levels a job may occupy.
struct DepthRange {
  int lo = 0;
  int hi = 0;

  bool contains(int level) const noexcept { return lo <= level && level <= hi; }
  bool operator==(const DepthRange&) const = default;
};

/// Max-depth, beta and depth range per job, indexed by JobRef.
struct DepthInfo {
  std::vector<int> max_depth;
  std::vector<int> beta;
  std::vector<DepthRange> range;

  int max_level() const;
};

/// Longest-path length (in edges) from any initial job. O(V + E).
std::vector<int> max_depths(const DependencyGraph& graph);

/// [delta, beta - 1] per job, beta being the smallest max-depth among the
/// job's dependents. Final jobs get beta = delta + 1.
std::vector<DepthRange> depth_ranges(const DependencyGraph& graph, const std::vector<int>& depths);

DepthInfo analyze_depths(const DependencyGraph& graph);

/// For each level 0..max level, the jobs whose range contains it (ascending refs).
std::vector<std::vector<JobRef>> concurrency_sets(const std::vector<DepthRange>& ranges);

/// Node-by-job text tables of max-depths and depth ranges.
std::string format_depth_tables(const DependencyGraph& graph, const DepthInfo& info);
/// CSV with header node,job,delta,range_lo,range_hi.
std::string format_depth_csv(const DependencyGraph& graph, const DepthInfo& info);

}  // namespace pwrdist
