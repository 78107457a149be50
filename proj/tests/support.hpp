#pragma once

// Shared fixtures and random instance generators for the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pwrdist/model.hpp"

namespace pwrdist::testing {

inline std::string data_path(const std::string& name) { return std::string(PWRDIST_DATA_DIR) + "/" + name; }

struct RandomGraphSpec {
  int nodes = 3;
  int min_jobs_per_node = 1;
  int max_jobs_per_node = 3;
  int max_total_jobs = 10;
  double dep_probability = 0.4;
  double min_work = 500.0;
  double max_work = 5000.0;
};

/// Random graph honoring the model rules: jobs are laid out in a random
/// interleaving of the per-node sequences and may depend on at most one
/// earlier job of every other node, so the result is always acyclic.
inline DependencyGraph random_graph(std::mt19937_64& rng, const RandomGraphSpec& spec) {
  std::uniform_int_distribution<int> jobs_dist(spec.min_jobs_per_node, spec.max_jobs_per_node);
  std::vector<int> counts(spec.nodes);
  int total = 0;
  for (int& c : counts) {
    c = jobs_dist(rng);
    total += c;
  }
  while (total > spec.max_total_jobs) {
    auto it = std::max_element(counts.begin(), counts.end());
    if (*it <= 1) break;
    --*it;
    --total;
  }

  std::vector<int> order;
  for (int i = 0; i < spec.nodes; ++i) order.insert(order.end(), counts[i], i + 1);
  std::shuffle(order.begin(), order.end(), rng);

  std::uniform_real_distribution<double> work(spec.min_work, spec.max_work);
  std::bernoulli_distribution dep(spec.dep_probability);
  GraphBuilder b(spec.nodes);
  std::vector<std::vector<JobId>> seen(spec.nodes + 1);
  std::vector<int> next_index(spec.nodes + 1, 1);
  for (int node : order) {
    JobId id{node, next_index[node]++};
    b.add_job(id, std::round(work(rng)));
    for (int other = 1; other <= spec.nodes; ++other) {
      if (other == node || seen[other].empty() || !dep(rng)) continue;
      std::uniform_int_distribution<std::size_t> pick(0, seen[other].size() - 1);
      b.add_dependency(id, seen[other][pick(rng)]);
    }
    seen[node].push_back(id);
  }
  return b.build();
}

/// Same frequency ladder on every node: `freqs` ascending MHz with single-core
/// powers `powers` ascending mW.
inline PowerTable ladder_table(const std::vector<Megahertz>& freqs,
                               const std::vector<Milliwatts>& powers, Milliwatts idle = 500) {
  std::vector<PowerEntry> entries;
  for (std::size_t k = 0; k < freqs.size(); ++k) entries.push_back({1, freqs[k], powers[k]});
  PowerTable t;
  t.set_default(NodePower(idle, entries));
  return t;
}

/// Random ladder with `levels` frequencies; power grows faster than frequency.
inline PowerTable random_ladder(std::mt19937_64& rng, int levels) {
  std::uniform_int_distribution<int> fstep(100, 600);
  std::uniform_int_distribution<int> pstep(300, 2000);
  std::vector<Megahertz> f;
  std::vector<Milliwatts> p;
  Megahertz freq = 200 + fstep(rng);
  Milliwatts power = 1000 + pstep(rng);
  for (int k = 0; k < levels; ++k) {
    f.push_back(freq);
    p.push_back(power);
    freq += fstep(rng);
    power += pstep(rng);
  }
  return ladder_table(f, p, 500);
}

}  // namespace pwrdist::testing
