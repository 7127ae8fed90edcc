#include "qlkplan/qlkplan.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "config.hpp"
#include "error.hpp"
#include "runtime.hpp"
#include "server.hpp"
#include "sim.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

struct qlk_runtime {
  std::shared_ptr<const qlk::Runtime> rt;
  fs::path config_dir;
};

struct qlk_server {
  std::unique_ptr<qlk::Server> server;
};

namespace {

thread_local std::string g_last_error;

qlk_status set_error(qlk_status st, const std::string& msg) {
  g_last_error = msg;
  return st;
}

template <class F>
qlk_status guarded(F&& f) {
  try {
    f();
    return QLK_OK;
  } catch (const qlk::Error& e) {
    return set_error(static_cast<qlk_status>(e.code()), e.what());
  } catch (const json::exception& e) {
    return set_error(QLK_ERR_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(QLK_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(QLK_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(QLK_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void require(bool ok, const char* what) {
  if (!ok) throw qlk::Error(qlk::ErrorCode::kInvalidArgument, what);
}

fs::path tables_path_for(const char* config_path, const char* tables_path) {
  return tables_path && *tables_path ? fs::path(tables_path)
                                     : qlk::default_tables_path(config_path);
}

// Relative paths inside a config resolve against the config's directory.
std::string resolve_against(const fs::path& dir, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (dir / p).lexically_normal().string();
}

void apply_planner_overrides(qlk::EpisodeSpec& spec, int has_eta0, double eta0,
                             int has_budget, double budget_ms, long max_sims) {
  if (has_eta0 && spec.scenario.controller != qlk::RobotController::kBlp1) spec.planner.eta0 = eta0;
  if (has_budget) spec.planner.budget_ms = budget_ms;
  if (max_sims > 0) {
    spec.planner.max_simulations = max_sims;
    if (!has_budget) spec.planner.budget_ms = 0.0;
  }
  spec.planner.validate();
}

std::vector<qlk::RobotController> parse_planners(const char* list, qlk::RobotController dflt) {
  std::vector<qlk::RobotController> out;
  if (!list || !*list) return {dflt};
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(qlk::parse_controller(item));
  }
  require(!out.empty(), "planner list is empty");
  return out;
}

}  // namespace

extern "C" {

const char* qlk_version(void) { return QLK_VERSION_STRING; }

const char* qlk_last_error(void) { return g_last_error.c_str(); }

const char* qlk_status_name(qlk_status status) {
  switch (status) {
    case QLK_OK: return "ok";
    case QLK_ERR_INVALID_ARGUMENT: return "invalid argument";
    case QLK_ERR_CONFIG: return "config error";
    case QLK_ERR_IO: return "i/o error";
    case QLK_ERR_HASH_MISMATCH: return "config hash mismatch";
    case QLK_ERR_MISSING_TABLES: return "missing tables";
    case QLK_ERR_NOT_CONVERGED: return "not converged";
    case QLK_ERR_ZERO_LIKELIHOOD: return "zero likelihood";
    case QLK_ERR_PROTOCOL: return "protocol error";
    case QLK_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void qlk_string_free(char* s) { std::free(s); }

qlk_status qlk_config_check(const char* config_path, char** out_json) {
  return guarded([&] {
    require(config_path, "config_path is null");
    const qlk::Config cfg = qlk::load_config(config_path);
    if (out_json) *out_json = dup_string(qlk::to_json(cfg).dump(2));
  });
}

void qlk_solve_options_init(qlk_solve_options* opts) {
  if (opts) *opts = qlk_solve_options{nullptr, 0, nullptr, nullptr};
}

qlk_status qlk_solve(const char* config_path, const qlk_solve_options* opts, int* cache_hit,
                     char** out_path) {
  return guarded([&] {
    require(config_path, "config_path is null");
    qlk_solve_options o;
    qlk_solve_options_init(&o);
    if (opts) o = *opts;
    const qlk::Config cfg = qlk::load_config(config_path);
    const qlk::GameModel model(cfg.game);
    const fs::path path = tables_path_for(config_path, o.tables_path);
    if (o.force && fs::exists(path)) fs::remove(path);
    std::function<void(const qlk::SolveProgress&)> progress;
    if (o.progress) {
      progress = [&](const qlk::SolveProgress& p) {
        const json ev = {{"agent", p.agent == qlk::Agent::kRobot ? "robot" : "human"},
                         {"level", p.level},
                         {"lambda", p.lambda},
                         {"sweeps", p.sweeps}};
        o.progress(ev.dump().c_str(), o.progress_user);
      };
    }
    bool hit = false;
    qlk::ensure_tables(cfg, model, path, &hit, progress);
    if (cache_hit) *cache_hit = hit ? 1 : 0;
    if (out_path) *out_path = dup_string(path.string());
  });
}

qlk_status qlk_runtime_open(const char* config_path, const char* tables_path, qlk_runtime** out) {
  return guarded([&] {
    require(config_path && out, "config_path and out must not be null");
    *out = nullptr;
    qlk::Config cfg = qlk::load_config(config_path);
    auto model = std::make_shared<const qlk::GameModel>(cfg.game);
    auto tables = qlk::load_tables_for(cfg, *model, tables_path_for(config_path, tables_path));
    auto h = std::make_unique<qlk_runtime>();
    h->config_dir = fs::absolute(config_path).parent_path();
    h->rt = std::make_shared<const qlk::Runtime>(std::move(cfg), std::move(model), std::move(tables));
    *out = h.release();
  });
}

void qlk_runtime_free(qlk_runtime* rt) { delete rt; }

qlk_status qlk_runtime_config_hash(const qlk_runtime* rt, char* buf, size_t len) {
  return guarded([&] {
    require(rt && buf, "runtime and buffer must not be null");
    const std::string h = qlk::hash_hex(rt->rt->hash());
    require(len > h.size(), "buffer too small for the config hash");
    std::memcpy(buf, h.c_str(), h.size() + 1);
  });
}

void qlk_run_options_init(qlk_run_options* opts) {
  if (!opts) return;
  *opts = qlk_run_options{};
  opts->record_diagnostics = 1;
}

qlk_status qlk_run_episode(const qlk_runtime* rt, const qlk_run_options* opts,
                           const char* trace_path, char** out_summary_json) {
  return guarded([&] {
    require(rt && trace_path, "runtime and trace_path must not be null");
    qlk_run_options o;
    qlk_run_options_init(&o);
    if (opts) o = *opts;
    const qlk::Config& cfg = rt->rt->config();
    const auto controller = o.planner ? qlk::parse_controller(o.planner) : cfg.scenario.controller;
    qlk::EpisodeSpec spec =
        qlk::make_spec(cfg, controller, o.has_seed ? o.seed : cfg.scenario.seed, 0);
    if (o.has_true_theta) spec.scenario.true_theta = {o.true_k, o.true_lambda};
    if (o.has_random_start) spec.scenario.random_start_m = o.random_start_m;
    spec.record_diagnostics = o.record_diagnostics != 0;
    apply_planner_overrides(spec, o.has_eta0, o.eta0, o.has_budget_ms, o.budget_ms,
                            o.max_simulations);
    const qlk::EpisodeTrace tr = qlk::run_episode(*rt->rt, spec);
    qlk::write_trace(fs::path(trace_path), *rt->rt, tr);
    if (out_summary_json) *out_summary_json = dup_string(qlk::summary_json(rt->rt->model(), tr).dump());
  });
}

void qlk_batch_options_init(qlk_batch_options* opts) {
  if (!opts) return;
  *opts = qlk_batch_options{};
}

qlk_status qlk_run_batch(const qlk_runtime* rt, const qlk_batch_options* opts, const char* out_dir,
                         char** out_report_json) {
  return guarded([&] {
    require(rt, "runtime must not be null");
    qlk_batch_options o;
    qlk_batch_options_init(&o);
    if (opts) o = *opts;
    const qlk::Config& cfg = rt->rt->config();
    const auto planners = parse_planners(o.planners, cfg.scenario.controller);
    const int n = o.episodes > 0 ? o.episodes : cfg.scenario.repetitions;
    require(n >= 1, "a batch needs at least one episode per cell");
    std::vector<qlk::LatentState> thetas;
    if (o.all_types)
      thetas = rt->rt->human_model().space().types();
    else
      thetas = {cfg.scenario.true_theta};
    const std::uint64_t base = o.has_seed ? o.seed : cfg.scenario.seed;

    std::vector<qlk::EpisodeSpec> specs;
    int id = 0;
    for (const auto c : planners) {
      for (const auto& th : thetas) {
        for (int i = 0; i < n; ++i) {
          // Same seed across cells: paired comparisons between planners.
          qlk::EpisodeSpec s = qlk::make_spec(cfg, c, base + static_cast<std::uint64_t>(i), id++);
          s.scenario.true_theta = th;
          if (o.has_random_start) s.scenario.random_start_m = o.random_start_m;
          s.record_diagnostics = o.write_traces != 0;
          apply_planner_overrides(s, o.has_eta0, o.eta0, o.has_budget_ms, o.budget_ms,
                                  o.max_simulations);
          specs.push_back(std::move(s));
        }
      }
    }
    const auto traces = qlk::run_batch(*rt->rt, specs, o.workers);
    const auto cells = qlk::aggregate(traces, rt->rt->model().dt());
    json report = qlk::report_json(cells);
    report["config"] = cfg.name;
    report["config_hash"] = qlk::hash_hex(rt->rt->hash());
    report["episodes_per_cell"] = n;
    report["base_seed"] = base;

    if (out_dir && *out_dir) {
      const fs::path dir(out_dir);
      fs::create_directories(dir);
      auto write = [&](const fs::path& p, const std::string& text) {
        std::ofstream f(p);
        if (!f) throw qlk::Error(qlk::ErrorCode::kIo, "cannot write " + p.string());
        f << text;
      };
      write(dir / "report.json", report.dump(2) + "\n");
      write(dir / "metrics.csv", qlk::report_csv(cells));
      write(dir / "curves.csv", qlk::curves_csv(cells));
      if (o.write_traces) {
        for (const auto& tr : traces) {
          const auto& sc = tr.spec.scenario;
          std::ostringstream name;
          name << qlk::to_string(sc.controller) << "_k" << sc.true_theta.level << "_l"
               << sc.true_theta.lambda << "_" << tr.spec.id << ".jsonl";
          qlk::write_trace(dir / "traces" / name.str(), *rt->rt, tr);
        }
      }
    }
    if (out_report_json) *out_report_json = dup_string(report.dump(2));
  });
}

qlk_status qlk_replay(const qlk_runtime* rt, const char* trace_path, const char* format, char** out,
                      int* closed) {
  return guarded([&] {
    require(rt && trace_path && out, "runtime, trace_path and out must not be null");
    const std::string fmt = format ? format : "text";
    require(fmt == "text" || fmt == "csv", "replay format must be text or csv");
    std::ifstream in(trace_path);
    if (!in) throw qlk::Error(qlk::ErrorCode::kIo, std::string("cannot open trace ") + trace_path);
    const auto& model = rt->rt->model();
    const qlk::ReplayResult r = qlk::replay_trace(model, in);
    *out = dup_string(fmt == "csv" ? qlk::replay_csv(model, r) : qlk::replay_text(model, r));
    if (closed) *closed = r.closed ? 1 : 0;
  });
}

void qlk_serve_options_init(qlk_serve_options* opts) {
  if (!opts) return;
  *opts = qlk_serve_options{};
  opts->port = -1;
  opts->multi_session = -1;
}

qlk_status qlk_server_start(const qlk_runtime* rt, const qlk_serve_options* opts,
                            qlk_server** out) {
  return guarded([&] {
    require(rt && out, "runtime and out must not be null");
    *out = nullptr;
    qlk_serve_options o;
    qlk_serve_options_init(&o);
    if (opts) o = *opts;
    const qlk::Config& cfg = rt->rt->config();
    qlk::ServerOptions so = qlk::ServerOptions::from_config(cfg);
    so.static_dir = resolve_against(rt->config_dir, so.static_dir);
    if (o.bind) so.bind = o.bind;
    if (o.port >= 0) so.port = o.port;
    if (o.static_dir) so.static_dir = o.static_dir;
    if (o.trace_dir) so.trace_dir = o.trace_dir;
    if (o.planner) {
      so.controller = qlk::parse_controller(o.planner);
      if (so.controller == qlk::RobotController::kQlk)
        throw qlk::ConfigError("the service supports the ours and blp1 planners only");
    }
    if (o.has_seed) so.seed = o.seed;
    if (o.has_budget_ms) so.budget_ms = o.budget_ms;
    if (o.tick_ms > 0) so.tick_ms = o.tick_ms;
    if (o.multi_session >= 0) so.multi_session = o.multi_session != 0;
    so.quiet = o.quiet != 0;
    auto h = std::make_unique<qlk_server>();
    h->server = std::make_unique<qlk::Server>(rt->rt, so);
    h->server->start();
    *out = h.release();
  });
}

int qlk_server_port(const qlk_server* srv) { return srv ? srv->server->port() : -1; }

qlk_status qlk_server_wait(qlk_server* srv) {
  return guarded([&] {
    require(srv, "server must not be null");
    srv->server->wait();
  });
}

qlk_status qlk_server_stop(qlk_server* srv) {
  return guarded([&] {
    require(srv, "server must not be null");
    srv->server->stop();
  });
}

void qlk_server_free(qlk_server* srv) { delete srv; }

}  // extern "C"
