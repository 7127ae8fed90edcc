// qlkplan command-line tool. Talks to the library only through the C API.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <pthread.h>

#include "CLI11.hpp"
#include "qlkplan/qlkplan.h"

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

struct Failure {
  int code;
};

int exit_code_for(qlk_status st) {
  return st == QLK_ERR_CONFIG || st == QLK_ERR_INVALID_ARGUMENT ? kExitUsage : kExitError;
}

void check(qlk_status st) {
  if (st == QLK_OK) return;
  std::cerr << "qlkplan: " << qlk_status_name(st) << ": " << qlk_last_error() << "\n";
  throw Failure{exit_code_for(st)};
}

// Owns a string handed out by the library.
struct LibString {
  char* p = nullptr;
  ~LibString() { qlk_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct Runtime {
  qlk_runtime* h = nullptr;
  ~Runtime() { qlk_runtime_free(h); }
};

struct Common {
  std::string config;
  std::string tables;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--tables", c.tables, "Solved tables (default: <config stem>.tables)");
}

Runtime open_runtime(const Common& c) {
  Runtime rt;
  const qlk_status st =
      qlk_runtime_open(c.config.c_str(), c.tables.empty() ? nullptr : c.tables.c_str(), &rt.h);
  if (st == QLK_ERR_MISSING_TABLES) {
    std::cerr << "qlkplan: " << qlk_last_error() << "\n"
              << "hint: qlkplan solve --config " << c.config
              << (c.tables.empty() ? "" : " --tables " + c.tables) << "\n";
    throw Failure{kExitError};
  }
  check(st);
  return rt;
}

void on_progress(const char* event, void* user) {
  if (*static_cast<bool*>(user)) return;
  std::cerr << "solved " << event << "\n";
}

int cmd_solve(const Common& c, bool force, bool quiet) {
  qlk_solve_options o;
  qlk_solve_options_init(&o);
  o.tables_path = c.tables.empty() ? nullptr : c.tables.c_str();
  o.force = force ? 1 : 0;
  o.progress = on_progress;
  o.progress_user = &quiet;
  int hit = 0;
  LibString path;
  check(qlk_solve(c.config.c_str(), &o, &hit, &path.p));
  std::cout << path.str() << (hit ? " (cache hit)" : " (solved)") << "\n";
  return 0;
}

struct PlanFlags {
  std::optional<std::uint64_t> seed;
  std::string planner;
  std::optional<double> eta0;
  std::optional<double> budget_ms;
  long max_sims = 0;
  std::optional<double> random_start;
};

void add_plan_flags(CLI::App* cmd, PlanFlags& f, const char* planner_help) {
  cmd->add_option("--seed", f.seed, "Episode seed (batch: base seed)");
  cmd->add_option("--planner", f.planner, planner_help);
  cmd->add_option("--eta0", f.eta0, "Information-gain weight (ignored for blp1)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--budget-ms", f.budget_ms, "Planning budget per decision (ms)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--max-sims", f.max_sims, "Cap simulations per decision (deterministic)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--random-start", f.random_start,
                  "Human start uniform within +-M metres of the robot")
      ->check(CLI::NonNegativeNumber);
}

int cmd_run(const Common& c, const PlanFlags& f, const std::string& theta, std::string out) {
  Runtime rt = open_runtime(c);
  qlk_run_options o;
  qlk_run_options_init(&o);
  if (!f.planner.empty()) o.planner = f.planner.c_str();
  if (f.seed) o.has_seed = 1, o.seed = *f.seed;
  if (f.eta0) o.has_eta0 = 1, o.eta0 = *f.eta0;
  if (f.budget_ms) o.has_budget_ms = 1, o.budget_ms = *f.budget_ms;
  if (f.random_start) o.has_random_start = 1, o.random_start_m = *f.random_start;
  o.max_simulations = f.max_sims;
  if (!theta.empty()) {
    int k = 0;
    double lambda = 0.0;
    if (std::sscanf(theta.c_str(), "%d:%lf", &k, &lambda) != 2) {
      std::cerr << "qlkplan: --theta expects K:LAMBDA, e.g. 1:0.8\n";
      throw Failure{kExitUsage};
    }
    o.has_true_theta = 1, o.true_k = k, o.true_lambda = lambda;
  }
  if (out.empty()) out = "traces/run-" + std::to_string(f.seed ? *f.seed : 0) + ".jsonl";
  LibString summary;
  check(qlk_run_episode(rt.h, &o, out.c_str(), &summary.p));
  std::cerr << summary.str() << "\n";
  std::cout << out << "\n";
  return 0;
}

int cmd_batch(const Common& c, const PlanFlags& f, int episodes, bool all_types, int workers,
              bool traces, const std::string& out) {
  Runtime rt = open_runtime(c);
  qlk_batch_options o;
  qlk_batch_options_init(&o);
  if (!f.planner.empty()) o.planners = f.planner.c_str();
  if (f.seed) o.has_seed = 1, o.seed = *f.seed;
  if (f.eta0) o.has_eta0 = 1, o.eta0 = *f.eta0;
  if (f.budget_ms) o.has_budget_ms = 1, o.budget_ms = *f.budget_ms;
  if (f.random_start) o.has_random_start = 1, o.random_start_m = *f.random_start;
  o.max_simulations = f.max_sims;
  o.episodes = episodes;
  o.all_types = all_types ? 1 : 0;
  o.workers = workers;
  o.write_traces = traces ? 1 : 0;
  LibString report;
  check(qlk_run_batch(rt.h, &o, out.c_str(), &report.p));
  std::cout << out << "/report.json\n";
  return 0;
}

int cmd_serve(const Common& c, const std::string& bind, int port, const std::string& static_dir,
              const std::string& trace_dir, const PlanFlags& f, int tick_ms, bool multi,
              bool quiet) {
  Runtime rt = open_runtime(c);
  qlk_serve_options o;
  qlk_serve_options_init(&o);
  if (!bind.empty()) o.bind = bind.c_str();
  o.port = port;
  if (!static_dir.empty()) o.static_dir = static_dir.c_str();
  if (!trace_dir.empty()) o.trace_dir = trace_dir.c_str();
  if (!f.planner.empty()) o.planner = f.planner.c_str();
  if (f.seed) o.has_seed = 1, o.seed = *f.seed;
  if (f.budget_ms) o.has_budget_ms = 1, o.budget_ms = *f.budget_ms;
  o.tick_ms = tick_ms;
  if (multi) o.multi_session = 1;
  o.quiet = quiet ? 1 : 0;

  // Signals go to this thread only, via sigwait below.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  qlk_server* srv = nullptr;
  check(qlk_server_start(rt.h, &o, &srv));
  std::cout << "listening on port " << qlk_server_port(srv) << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  std::cerr << "shutting down\n";
  qlk_server_stop(srv);
  qlk_server_free(srv);
  return 0;
}

int cmd_replay(const Common& c, const std::string& trace, const std::string& format,
               const std::string& out) {
  Runtime rt = open_runtime(c);
  LibString text;
  int closed = 0;
  check(qlk_replay(rt.h, trace.c_str(), format.c_str(), &text.p, &closed));
  if (out.empty()) {
    std::cout << text.str();
  } else {
    std::ofstream f(out);
    if (!f) {
      std::cerr << "qlkplan: cannot write " << out << "\n";
      return kExitError;
    }
    f << text.str();
  }
  if (!closed) {
    std::cerr << "qlkplan: replay diverged from the recorded successor states\n";
    return kExitError;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantal level-k planning toolkit for the forced-merge game"};
  app.set_version_flag("--version", std::string(qlk_version()));
  app.require_subcommand(1);

  Common common;
  PlanFlags flags;

  auto* solve = app.add_subcommand("solve", "Solve and cache the ql-k tables for a config");
  add_common(solve, common);
  bool force = false, quiet = false;
  solve->add_flag("--force", force, "Re-solve even when cached tables match");
  solve->add_flag("--quiet", quiet, "No progress output");

  auto* run = app.add_subcommand("run", "Run one episode and write its trace");
  add_common(run, common);
  add_plan_flags(run, flags, "ours | blp1 | qlk");
  std::string theta, run_out;
  run->add_option("--theta", theta, "True human type K:LAMBDA (default: config)");
  run->add_option("--out", run_out, "Trace path (default traces/run-<seed>.jsonl)");

  auto* batch = app.add_subcommand("batch", "Run a sweep and write metrics");
  add_common(batch, common);
  add_plan_flags(batch, flags, "Comma-separated planners, e.g. ours,blp1");
  int episodes = 0, workers = 0;
  bool all_types = false, traces = false;
  std::string batch_out = "out/batch";
  batch->add_option("--episodes", episodes, "Episodes per cell (default: config repetitions)")
      ->check(CLI::PositiveNumber);
  batch->add_flag("--all-types", all_types, "One cell per human type in the latent space");
  batch->add_option("--workers", workers, "Worker threads (0 = all cores)")
      ->check(CLI::NonNegativeNumber);
  batch->add_flag("--traces", traces, "Also write every episode trace");
  batch->add_option("--out", batch_out, "Output directory");

  auto* serve = app.add_subcommand("serve", "Start the interaction service");
  add_common(serve, common);
  add_plan_flags(serve, flags, "ours | blp1");
  std::string bind, static_dir, trace_dir;
  int port = -1, tick_ms = 0;
  bool multi = false, serve_quiet = false;
  serve->add_option("--bind", bind, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--static", static_dir, "Directory with the UI bundle");
  serve->add_option("--trace-dir", trace_dir, "Persist finished episodes here");
  serve->add_option("--tick-ms", tick_ms, "Environment tick period")->check(CLI::PositiveNumber);
  serve->add_flag("--multi-session", multi, "Allow concurrent sessions");
  serve->add_flag("--quiet", serve_quiet, "No request logging");

  auto* replay = app.add_subcommand("replay", "Re-step a trace and render it");
  add_common(replay, common);
  std::string trace, format = "text", replay_out;
  replay->add_option("trace", trace, "Trace file (.jsonl)")->required()->check(CLI::ExistingFile);
  replay->add_option("--format", format, "text | csv")->check(CLI::IsMember({"text", "csv"}));
  replay->add_option("--out", replay_out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*solve) return cmd_solve(common, force, quiet);
    if (*run) return cmd_run(common, flags, theta, run_out);
    if (*batch) return cmd_batch(common, flags, episodes, all_types, workers, traces, batch_out);
    if (*serve)
      return cmd_serve(common, bind, port, static_dir, trace_dir, flags, tick_ms, multi,
                       serve_quiet);
    if (*replay) return cmd_replay(common, trace, format, replay_out);
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitUsage;
}
