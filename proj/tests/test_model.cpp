#include <doctest.h>

#include <functional>
#include <random>

#include "pwrdist/model.hpp"
#include "support.hpp"

using namespace pwrdist;
using pwrdist::testing::data_path;

namespace {

PowerTable two_freq_table() {
  return testing::ladder_table({500, 1000}, {2000, 4000}, 500);
}

// Enumerates every initial-to-final path explicitly.
double brute_force_longest(const DependencyGraph& g, const std::vector<double>& d) {
  double best = 0.0;
  std::function<void(JobRef, double)> walk = [&](JobRef r, double acc) {
    acc += d[r];
    if (g.successors(r).empty()) {
      best = std::max(best, acc);
      return;
    }
    for (JobRef s : g.successors(r)) walk(s, acc);
  };
  for (JobRef r : g.initial_jobs()) walk(r, 0.0);
  return best;
}

std::vector<double> nominal_times(const DependencyGraph& g, Milliwatts bound, const PowerTable& t) {
  std::vector<double> out;
  for (const Job& j : g.jobs()) out.push_back(execution_time(j, bound, t));
  return out;
}

}  // namespace

TEST_CASE("ring3 fixture parses into 15 jobs") {
  DependencyGraph g = load_graph(data_path("ring3.graph"));
  CHECK(g.node_count() == 3);
  CHECK(g.job_count() == 15);

  std::vector<JobId> initial, final;
  for (JobRef r : g.initial_jobs()) initial.push_back(g.job(r).id);
  for (JobRef r : g.final_jobs()) final.push_back(g.job(r).id);
  CHECK(initial == std::vector<JobId>{{1, 1}, {2, 1}, {3, 1}});
  CHECK(final == std::vector<JobId>{{1, 5}, {2, 5}, {3, 5}});
}

TEST_CASE("single job graph") {
  DependencyGraph g = parse_graph("nodes 1\njob 1 1 100\n");
  CHECK(g.job_count() == 1);
  CHECK(g.edge_count() == 0);
}

TEST_CASE("implicit serial edges and idempotent duplicates") {
  DependencyGraph g = parse_graph(
      "nodes 2\n"
      "job 1 1 10\njob 1 2 10\njob 1 3 10\n"
      "job 2 1 10\njob 2 2 10\n"
      "dep 2 2 <- 1 2\n"
      "dep 2 2 <- 1 2\n"
      "dep 1 2 <- 1 1\n");
  // 1->2->3 on node 1, 1->2 on node 2, plus the cross edge.
  CHECK(g.edge_count() == 4);
  auto p = g.predecessors(g.ref({2, 2}));
  CHECK(p.size() == 2);
}

TEST_CASE("graph parse errors") {
  SUBCASE("syntax error carries the line") {
    try {
      parse_graph("nodes 1\njob 1 1 10\nbogus line\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("two-node cycle") {
    CHECK_THROWS_WITH_AS(parse_graph("nodes 2\njob 1 1 1\njob 2 1 1\n"
                                     "dep 1 1 <- 2 1\ndep 2 1 <- 1 1\n"),
                         doctest::Contains("cycle"), ValidationError);
  }
  SUBCASE("cycle through serial edges") {
    CHECK_THROWS_AS(parse_graph("nodes 2\njob 1 1 1\njob 1 2 1\njob 2 1 1\njob 2 2 1\n"
                                "dep 2 1 <- 1 2\ndep 1 1 <- 2 2\n"),
                    ValidationError);
  }
  SUBCASE("duplicate job") {
    CHECK_THROWS_AS(parse_graph("nodes 1\njob 1 1 1\njob 1 1 2\n"), ValidationError);
  }
  SUBCASE("dangling dependency") {
    CHECK_THROWS_AS(parse_graph("nodes 2\njob 1 1 1\njob 2 1 1\ndep 2 1 <- 1 7\n"),
                    ValidationError);
  }
  SUBCASE("two dependencies on the same other node") {
    CHECK_THROWS_AS(parse_graph("nodes 2\njob 1 1 1\njob 1 2 1\njob 2 1 1\n"
                                "dep 2 1 <- 1 1\ndep 2 1 <- 1 2\n"),
                    ValidationError);
  }
  SUBCASE("non-positive work") {
    CHECK_THROWS(parse_graph("nodes 1\njob 1 1 0\n"));
  }
  SUBCASE("gap in job indices") {
    CHECK_THROWS_AS(parse_graph("nodes 1\njob 1 1 1\njob 1 3 1\n"), ValidationError);
  }
}

TEST_CASE("format_graph round-trips") {
  DependencyGraph g = load_graph(data_path("ring3.graph"));
  DependencyGraph h = parse_graph(format_graph(g));
  REQUIRE(h.job_count() == g.job_count());
  CHECK(h.edge_count() == g.edge_count());
  for (JobRef r = 0; r < g.job_count(); ++r) {
    CHECK(h.job(r).work == g.job(r).work);
    CHECK(std::vector<JobRef>(h.predecessors(r).begin(), h.predecessors(r).end()) ==
          std::vector<JobRef>(g.predecessors(r).begin(), g.predecessors(r).end()));
  }
}

TEST_CASE("execution time follows the highest admissible frequency") {
  PowerTable t = two_freq_table();
  Job j{{1, 1}, 1000.0, 0.0};
  CHECK(execution_time(j, 4000, t) == doctest::Approx(1.0));
  CHECK(execution_time(j, 2000, t) == doctest::Approx(2.0));
  CHECK(execution_time(j, 3999, t) == doctest::Approx(2.0));
  CHECK_THROWS_AS(execution_time(j, 1999, t), InfeasibleError);
}

TEST_CASE("serial fraction only scales the parallel share") {
  PowerTable t = two_freq_table();
  Job j{{1, 1}, 1000.0, 0.5};
  // 1000 * (0.5/1000 + 0.5/500)
  CHECK(execution_time(j, 2000, t) == doctest::Approx(1.5));
  CHECK(execution_time(j, 4000, t) == doctest::Approx(1.0));
}

TEST_CASE("execution time is monotone in the bound") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    PowerTable t = testing::random_ladder(rng, 4);
    auto bounds = power_bounds(t, 1);
    Job j{{1, 1}, 1234.0, trial % 2 ? 0.3 : 0.0};
    double prev = execution_time(j, bounds.front(), t);
    for (Milliwatts b = bounds.front(); b <= bounds.back() + 500; b += 37) {
      double now = execution_time(j, b, t);
      CHECK(now <= prev);
      prev = now;
    }
  }
}

TEST_CASE("path time sums job times along a chained path") {
  PowerTable t = two_freq_table();
  DependencyGraph g = parse_graph("nodes 2\njob 1 1 1000\njob 2 1 1500\ndep 2 1 <- 1 1\n");
  PowerMap pi = PowerMap::uniform(2, 2000);
  std::vector<JobRef> one{0};
  CHECK(path_time(g, one, pi, t) == doctest::Approx(2.0));
  std::vector<JobRef> both{0, 1};
  CHECK(path_time(g, both, pi, t) == doctest::Approx(5.0));

  std::vector<JobRef> broken{1, 0};
  CHECK_THROWS(path_time(g, broken, pi, t));
  PowerMap partial(2);
  partial.set(0, 2000);
  CHECK_THROWS_AS(path_time(g, both, partial, t), std::out_of_range);
}

TEST_CASE("ring3 at the nominal bound takes 19 time units") {
  DependencyGraph g = load_graph(data_path("ring3.graph"));
  PowerTable t = load_power_table(data_path("synthetic2.csv"));
  const Milliwatts P = min_feasible_cluster_bound(t, 3);
  PowerMap pi = PowerMap::uniform(g.job_count(), nominal_power_bound(P, 3));
  CHECK(total_execution_time(g, pi, t) == doctest::Approx(19.0));

  // The first jobs take 2, 3 and 1 time units.
  CHECK(execution_time(g.job(g.ref({1, 1})), 2000, t) == doctest::Approx(2.0));
  CHECK(execution_time(g.job(g.ref({2, 1})), 2000, t) == doctest::Approx(3.0));
  CHECK(execution_time(g.job(g.ref({3, 1})), 2000, t) == doctest::Approx(1.0));
}

TEST_CASE("chain makespan is the sum of its jobs") {
  PowerTable t = two_freq_table();
  DependencyGraph g = parse_graph("nodes 1\njob 1 1 500\njob 1 2 1000\njob 1 3 1500\n");
  CHECK(total_execution_time(g, PowerMap::uniform(3, 2000), t) == doctest::Approx(6.0));
}

TEST_CASE("longest-path DP matches explicit path enumeration") {
  std::mt19937_64 rng(2024);
  PowerTable t = two_freq_table();
  for (int trial = 0; trial < 300; ++trial) {
    testing::RandomGraphSpec spec;
    spec.nodes = 1 + trial % 4;
    spec.max_jobs_per_node = 5;
    spec.max_total_jobs = 12;
    spec.dep_probability = 0.5;
    DependencyGraph g = testing::random_graph(rng, spec);
    auto d = nominal_times(g, 2000, t);
    CHECK(longest_path(g, d) == doctest::Approx(brute_force_longest(g, d)).epsilon(1e-9));
  }
}

TEST_CASE("raising one job's bound never lengthens the makespan") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    PowerTable t = testing::random_ladder(rng, 3);
    auto bounds = power_bounds(t, 1);
    DependencyGraph g = testing::random_graph(rng, {});
    std::uniform_int_distribution<std::size_t> pick(0, bounds.size() - 1);
    PowerMap pi(g.job_count());
    for (JobRef r = 0; r < g.job_count(); ++r) pi.set(r, bounds[pick(rng)]);
    const double before = total_execution_time(g, pi, t);
    JobRef r = std::uniform_int_distribution<JobRef>(0, g.job_count() - 1)(rng);
    pi.set(r, bounds.back());
    CHECK(total_execution_time(g, pi, t) <= before + 1e-12);
  }
}

TEST_CASE("topological order respects every edge") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    DependencyGraph g = testing::random_graph(rng, {});
    std::vector<std::size_t> pos(g.job_count());
    auto order = g.topological_order();
    REQUIRE(order.size() == g.job_count());
    for (std::size_t k = 0; k < order.size(); ++k) pos[order[k]] = k;
    for (JobRef r = 0; r < g.job_count(); ++r)
      for (JobRef p : g.predecessors(r)) CHECK(pos[p] < pos[r]);
  }
}

TEST_CASE("nominal power bound uses integer division") {
  CHECK(nominal_power_bound(13000, 2) == 6500);
  CHECK(nominal_power_bound(9000, 3) == 3000);
  CHECK(nominal_power_bound(10000, 3) == 3333);
  CHECK(10000 - 3 * nominal_power_bound(10000, 3) == 1);
  CHECK_THROWS(nominal_power_bound(1000, 0));
}

TEST_CASE("power table parsing and invariants") {
  PowerTable t = parse_power_table(
      "node,cores,freq_mhz,power_mw\n"
      "1,idle,,400\n1,1,500,2000\n1,1,1000,4000\n1,2,500,3000\n"
      "*,idle,,500\n*,1,800,2500\n");
  CHECK(t.node(1).idle_power() == 400);
  CHECK(t.node(1).frequencies(1) == std::vector<Megahertz>{500, 1000});
  CHECK(t.node(1).power(2, 500) == 3000);
  CHECK(t.node(7).max_frequency() == 800);
  CHECK(power_bounds(t, 1) == std::vector<Milliwatts>{2000, 4000});
  CHECK(min_feasible_cluster_bound(t, 2) == 2 * 2500);

  const std::string header = "node,cores,freq_mhz,power_mw\n";
  CHECK_THROWS_AS(parse_power_table(header + "1,idle,,500\n1,1,500,2000\n1,1,1000,2000\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_power_table(header + "1,idle,,2000\n1,1,500,2000\n"), ParseError);
  CHECK_THROWS_AS(parse_power_table(header + "1,idle,,500\n1,1,0,2000\n"), ParseError);
  CHECK_THROWS_AS(parse_power_table(header + "1,1,500,2000\n"), ParseError);
  CHECK_THROWS_AS(parse_power_table("freq,power\n"), ParseError);
}
