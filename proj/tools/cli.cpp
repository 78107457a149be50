#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "pwrdist/depth.hpp"
#include "pwrdist/heuristic.hpp"
#include "pwrdist/ilp.hpp"
#include "pwrdist/model.hpp"
#include "pwrdist/netproto.hpp"
#include "pwrdist/simkernel.hpp"

namespace pwrdist::cli {

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string graph;
  std::string table;
  std::string power;
  bool csv = false;

  // ilp
  std::string export_path;
  bool solve = false;
  long time_limit_ms = 0;

  // simulate
  std::string mode = "all";
  double latency = 0.0;
  double transition_delay = 0.0;
  std::string budget = "safe";
  std::string events_path;
  std::uint64_t seed = 1;

  // sweep
  double mean = 10.0;
  std::string stddevs = "0..6";
  int trials = 20;
  std::string output;

  // serve / replay
  std::string bind = "127.0.0.1:9400";
  int nodes = 0;
  std::string address_map;
  std::string status_file;
  double duration = 0.0;
  std::string trace;
  std::string controller = "127.0.0.1:9400";
  double timeout = -1.0;
  bool quiet = false;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error(fmt::format("cannot write '{}'", path));
  f << text;
}

BudgetMode parse_budget(const std::string& s) {
  if (s == "safe") return BudgetMode::Safe;
  if (s == "reported") return BudgetMode::Reported;
  throw UsageError(fmt::format("--budget must be safe or reported, got '{}'", s));
}

// "min" (or empty) is the smallest bound every node can run under.
Milliwatts resolve_power(const std::string& s, const PowerTable& table, int nodes) {
  if (s.empty() || s == "min") return min_feasible_cluster_bound(table, nodes);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || v <= 0)
    throw UsageError(fmt::format("--power must be a positive integer (mW) or 'min', got '{}'", s));
  return v;
}

std::vector<double> parse_stddevs(const std::string& s) {
  std::vector<double> out;
  auto range = s.find("..");
  try {
    if (range != std::string::npos) {
      int lo = std::stoi(s.substr(0, range));
      int hi = std::stoi(s.substr(range + 2));
      if (lo < 0 || hi < lo) throw UsageError("bad stddev range");
      for (int v = lo; v <= hi; ++v) out.push_back(v);
      return out;
    }
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      double v = std::stod(item);
      if (v < 0) throw UsageError("stddevs must be non-negative");
      out.push_back(v);
    }
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError(fmt::format("--stddevs expects lo..hi or a comma list, got '{}'", s));
  }
  if (out.empty()) throw UsageError("--stddevs is empty");
  return out;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_validate(const Options& o, std::ostream& out) {
  DependencyGraph g = load_graph(o.graph);
  fmt::print(out, "{}: {} jobs, valid\n", o.graph, g.job_count());
  fmt::print(out, "nodes {}, dependencies {}\n", g.node_count(), g.edge_count());
  auto list = [&](const std::vector<JobRef>& refs) {
    std::string s;
    for (JobRef r : refs) s += " " + to_string(g.job(r).id);
    return s;
  };
  fmt::print(out, "initial jobs:{}\n", list(g.initial_jobs()));
  fmt::print(out, "final jobs:{}\n", list(g.final_jobs()));
  return kOk;
}

int cmd_depths(const Options& o, std::ostream& out) {
  DependencyGraph g = load_graph(o.graph);
  DepthInfo info = analyze_depths(g);
  out << (o.csv ? format_depth_csv(g, info) : format_depth_tables(g, info));
  return kOk;
}

int cmd_ilp(const Options& o, std::ostream& out) {
  DependencyGraph g = load_graph(o.graph);
  PowerTable table = load_power_table(o.table);
  const Milliwatts P = resolve_power(o.power, table, g.node_count());
  IlpInstance inst = build_instance(g, table, P);

  if (!o.export_path.empty()) write_output(o.export_path, export_lp(inst), out);
  if (o.solve) {
    Assignment a = solve_branch_and_bound(inst, std::chrono::milliseconds{o.time_limit_ms});
    if (o.csv) {
      out << format_assignment_csv(inst, a);
    } else {
      fmt::print(out, "cluster bound {} mW, objective t = {}{}\n", P, a.objective,
                 a.optimal ? "" : " (time limit hit, not proven optimal)");
      fmt::print(out, "nodes explored {}\n", a.nodes_explored);
      for (std::size_t k = 0; k < inst.jobs.size(); ++k) {
        const IlpVariable& v = inst.variables[a.choice[k]];
        fmt::print(out, "{:<8} bound {:>6} mW  freq {:>5} MHz  time {}\n",
                   to_string(inst.job_ids[k]), v.bound, v.freq, v.time);
      }
    }
  }
  if (o.export_path.empty() && !o.solve) {
    fmt::print(out, "cluster bound {} mW\n", P);
    fmt::print(out, "assignment variables {}\n", inst.assignment_variable_count());
    fmt::print(out, "assignment rows {}, power rows {}, makespan rows {}\n",
               inst.assignment_rows.size(), inst.power_rows.size(), inst.makespan_rows.size());
  }
  return kOk;
}

SimConfig sim_config(const Options& o, Milliwatts P, SimMode mode) {
  SimConfig cfg;
  cfg.cluster_bound = P;
  cfg.mode = mode;
  cfg.latency = o.latency;
  cfg.transition_delay = o.transition_delay;
  cfg.budget_mode = parse_budget(o.budget);
  cfg.seed = o.seed;
  cfg.ilp_time_limit = std::chrono::milliseconds{o.time_limit_ms};
  if (cfg.latency < 0 || cfg.transition_delay < 0)
    throw UsageError("--latency and --transition-delay must be non-negative");
  return cfg;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  DependencyGraph g = load_graph(o.graph);
  PowerTable table = load_power_table(o.table);
  const Milliwatts P = resolve_power(o.power, table, g.node_count());

  std::vector<SimMode> modes;
  if (o.mode == "all") {
    modes = {SimMode::EqualShare, SimMode::Ilp, SimMode::Heuristic};
  } else if (auto m = parse_sim_mode(o.mode)) {
    modes = {*m};
  } else {
    throw UsageError(fmt::format("--mode must be equal, ilp, heuristic or all, got '{}'", o.mode));
  }

  const double baseline = run_equal_share(g, table, P).makespan;
  std::vector<SimResult> results;
  for (SimMode m : modes) {
    results.push_back(simulate(g, table, sim_config(o, P, m)));
    results.back().set_baseline(baseline);
  }

  if (!o.events_path.empty()) {
    std::string text;
    for (const auto& r : results) {
      if (results.size() > 1) text += fmt::format("# mode {}\n", to_string(r.mode));
      text += r.events_csv();
    }
    write_output(o.events_path, text, out);
  }

  if (results.size() == 1 && !o.csv) {
    fmt::print(out, "mode {} cluster_bound_mw={} {}\n", to_string(results[0].mode), P,
               results[0].summary());
    return kOk;
  }
  if (o.csv) {
    out << "mode,makespan,speedup,avg_power_mw,peak_power_mw,violations\n";
    for (const auto& r : results)
      fmt::print(out, "{},{},{},{},{},{}\n", to_string(r.mode), r.makespan, r.speedup.value_or(1.0),
                 r.average_power, r.peak_power, r.violations.size());
    return kOk;
  }
  fmt::print(out, "cluster bound {} mW, nominal bound {} mW\n", P,
             nominal_power_bound(P, g.node_count()));
  fmt::print(out, "{:<10} {:>10} {:>8} {:>13} {:>14} {:>11}\n", "mode", "makespan", "speedup",
             "avg_power_mw", "peak_power_mw", "violations");
  for (const auto& r : results)
    fmt::print(out, "{:<10} {:>10.4f} {:>8.4f} {:>13.1f} {:>14} {:>11}\n", to_string(r.mode),
               r.makespan, r.speedup.value_or(1.0), r.average_power, r.peak_power,
               r.violations.size());
  return kOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  DependencyGraph g = load_graph(o.graph);
  PowerTable table = load_power_table(o.table);
  SweepConfig cfg;
  cfg.cluster_bound = resolve_power(o.power, table, g.node_count());
  cfg.mean = o.mean;
  cfg.stddevs = parse_stddevs(o.stddevs);
  cfg.trials = o.trials;
  cfg.seed = o.seed;
  cfg.budget_mode = parse_budget(o.budget);
  cfg.latency = o.latency;
  cfg.ilp_time_limit = std::chrono::milliseconds{o.time_limit_ms};
  if (!(cfg.mean > 0)) throw UsageError("--mean must be positive");
  if (cfg.trials < 1) throw UsageError("--trials must be at least 1");
  write_output(o.output, sweep_stddev(g, table, cfg).csv(), out);
  return kOk;
}

int cmd_serve(const Options& o, std::ostream& out, std::ostream& err) {
  PowerTable table = load_power_table(o.table);
  if (o.nodes < 1) throw UsageError("--nodes must be at least 1");
  const Milliwatts P = resolve_power(o.power, table, o.nodes);
  PowerDistributor engine(P, o.nodes, parse_budget(o.budget), table);
  net::ControllerCore core(std::move(engine), [&err](const std::string& line) {
    err << line << '\n';
  });
  if (!o.address_map.empty()) core.load_address_map(slurp(o.address_map));

  net::UdpController server(o.bind, std::move(core));
  if (!o.status_file.empty()) server.set_status_file(o.status_file);
  fmt::print(err, "listening on {} (cluster bound {} mW, {} nodes)\n", server.local_address(), P,
             o.nodes);
  err.flush();

  g_stop.store(false);
  auto prev_int = std::signal(SIGINT, on_signal);
  auto prev_term = std::signal(SIGTERM, on_signal);
  const auto until = std::chrono::steady_clock::now() +
                     std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                         std::chrono::duration<double>(o.duration));
  while (!g_stop.load()) {
    server.poll_once(std::chrono::milliseconds{50});
    if (o.duration > 0 && std::chrono::steady_clock::now() >= until) break;
  }
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  out << server.core().status();
  return kOk;
}

int cmd_replay(const Options& o, std::ostream& out, std::ostream& err) {
  auto trace = net::load_trace(o.trace);
  net::ReplayOptions ro;
  if (o.timeout >= 0) ro.timeout = o.timeout;
  auto r = net::replay_trace(trace, o.controller, ro);
  if (!o.quiet)
    fmt::print(err, "{} rows, {} reports sent, timeout {} s\n", r.trace_rows, r.sent.size(),
               r.timeout);
  out << "node,bound_mw\n";
  for (const auto& d : r.distributes) fmt::print(out, "{},{}\n", d.node, d.bound);
  return kOk;
}

// key=value lines; '#' comments. Keys are long option names without dashes.
std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::istringstream in(slurp(path));
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key=value in config file");
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) throw ParseError(line_no, "empty config key");
    kv.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

}  // namespace

int run(const std::vector<std::string>& input, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Power-bound distribution across cluster nodes: analysis, ILP, simulation and "
               "the online controller."};
  app.name(input.empty() ? "pwrdist" : input[0]);
  app.require_subcommand(1);
  // Flags given on the command line come first, so they win over config values.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeFirst);
  app.add_option("--config", o.config, "key=value file supplying any flag; flags override it");

  auto graph_opt = [&](CLI::App* sub) {
    sub->add_option("graph,--graph", o.graph, "dependency graph file")->required();
  };
  auto table_opt = [&](CLI::App* sub, bool required) {
    auto* opt = sub->add_option("--table", o.table, "power table CSV");
    if (required) opt->required();
  };
  auto power_opt = [&](CLI::App* sub) {
    sub->add_option("--power", o.power, "cluster power bound in mW, or 'min' (default)");
  };

  auto* validate = app.add_subcommand("validate", "parse and validate a dependency graph");
  graph_opt(validate);

  auto* depths = app.add_subcommand("depths", "max-depth and depth-range tables");
  graph_opt(depths);
  depths->add_flag("--csv", o.csv, "CSV output");

  auto* ilp = app.add_subcommand("ilp", "build, export or solve the power-bound ILP");
  graph_opt(ilp);
  table_opt(ilp, true);
  power_opt(ilp);
  ilp->add_option("--export", o.export_path, "write the LP model ('-' for stdout)");
  ilp->add_flag("--solve", o.solve, "solve with branch and bound");
  ilp->add_option("--time-limit", o.time_limit_ms, "solver limit in ms (0: none)");
  ilp->add_flag("--csv", o.csv, "CSV assignment output");

  auto* sim = app.add_subcommand("simulate", "discrete-event simulation");
  graph_opt(sim);
  table_opt(sim, true);
  power_opt(sim);
  sim->add_option("--mode", o.mode, "equal | ilp | heuristic | all");
  sim->add_option("--latency", o.latency, "report to bound-change latency (time units)");
  sim->add_option("--transition-delay", o.transition_delay, "extra delay per bound change");
  sim->add_option("--budget", o.budget, "safe | reported");
  sim->add_option("--events", o.events_path, "write the event log CSV ('-' for stdout)");
  sim->add_option("--seed", o.seed, "seed");
  sim->add_option("--time-limit", o.time_limit_ms, "ILP solver limit in ms (0: none)");
  sim->add_flag("--csv", o.csv, "CSV comparison output");

  auto* sweep = app.add_subcommand("sweep", "median speedups over random job-time spreads");
  graph_opt(sweep);
  table_opt(sweep, true);
  power_opt(sweep);
  sweep->add_option("--mean", o.mean, "mean nominal job time");
  sweep->add_option("--stddevs", o.stddevs, "lo..hi or comma list");
  sweep->add_option("--trials", o.trials, "trials per stddev");
  sweep->add_option("--seed", o.seed, "seed");
  sweep->add_option("--budget", o.budget, "safe | reported");
  sweep->add_option("--latency", o.latency, "heuristic latency");
  sweep->add_option("--time-limit", o.time_limit_ms, "ILP solver limit in ms (0: none)");
  sweep->add_option("--output", o.output, "CSV path (default stdout)");

  auto* serve = app.add_subcommand("serve", "run the UDP power-distribution controller");
  table_opt(serve, true);
  power_opt(serve);
  serve->add_option("--nodes", o.nodes, "number of nodes")->required();
  serve->add_option("--bind", o.bind, "host:port");
  serve->add_option("--budget", o.budget, "safe | reported");
  serve->add_option("--address-map", o.address_map, "static 'node host:port' file");
  serve->add_option("--status-file", o.status_file, "rewritten after every datagram");
  serve->add_option("--duration", o.duration, "stop after this many seconds (0: until signal)");

  auto* replay = app.add_subcommand("replay", "send a block-detector trace to a controller");
  replay->add_option("trace,--trace", o.trace, "trace CSV")->required();
  replay->add_option("--controller", o.controller, "controller host:port");
  replay->add_option("--timeout", o.timeout, "report-manager timeout in s (default: measured RTT)");
  replay->add_flag("--quiet", o.quiet, "no summary on stderr");

  try {
    // Pull --config out first and append its entries after the real flags.
    std::vector<std::string> args;
    std::string config_path;
    for (std::size_t k = 1; k < input.size(); ++k) {
      if (input[k] == "--config") {
        if (k + 1 >= input.size()) throw UsageError("--config needs a file");
        config_path = input[++k];
      } else if (input[k].rfind("--config=", 0) == 0) {
        config_path = input[k].substr(9);
      } else {
        args.push_back(input[k]);
      }
    }
    if (!config_path.empty()) {
      CLI::App* sub = nullptr;
      for (const auto& a : args)
        if (a.empty() || a[0] != '-') {
          sub = app.get_subcommand_no_throw(a);
          break;
        }
      if (!sub) throw UsageError("--config needs a subcommand");
      for (const auto& [key, value] : read_config(config_path)) {
        CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (!opt) throw UsageError(fmt::format("unknown config key '{}' for {}", key, sub->get_name()));
        if (opt->get_expected_min() == 0) {
          if (value == "true" || value == "1" || value == "yes") args.push_back("--" + key);
          else if (!(value == "false" || value == "0" || value == "no"))
            throw UsageError(fmt::format("flag '{}' takes true or false", key));
        } else {
          args.push_back("--" + key);
          args.push_back(value);
        }
      }
    }

    std::vector<const char*> argv{app.get_name().c_str()};
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());

    if (validate->parsed()) return cmd_validate(o, out);
    if (depths->parsed()) return cmd_depths(o, out);
    if (ilp->parsed()) return cmd_ilp(o, out);
    if (sim->parsed()) return cmd_simulate(o, out);
    if (sweep->parsed()) return cmd_sweep(o, out);
    if (serve->parsed()) return cmd_serve(o, out, err);
    if (replay->parsed()) return cmd_replay(o, out, err);
    return kUsage;
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kUsage;
  } catch (const UsageError& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kUsage;
  } catch (const ParseError& e) {
    fmt::print(err, "parse error: {}\n", e.what());
    return kInvalidInput;
  } catch (const ValidationError& e) {
    fmt::print(err, "invalid: {}\n", e.what());
    return kInvalidInput;
  } catch (const InfeasibleError& e) {
    fmt::print(err, "infeasible: {}\n", e.what());
    return kInfeasible;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kRuntime;
  }
}

}  // namespace pwrdist::cli
