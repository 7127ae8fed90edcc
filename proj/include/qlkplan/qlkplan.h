#ifndef QLKPLAN_QLKPLAN_H
#define QLKPLAN_QLKPLAN_H

/*
 * qlkplan C API.
 *
 * Every function returns a qlk_status. On failure, qlk_last_error() returns
 * a message for the calling thread; it stays valid until the next failing
 * call on that thread. Strings returned through char** out-parameters are
 * owned by the caller and released with qlk_string_free().
 */

#include <stddef.h>
#include <stdint.h>

#if defined(QLK_BUILDING_LIBRARY)
#define QLK_API __attribute__((visibility("default")))
#else
#define QLK_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum qlk_status {
  QLK_OK = 0,
  QLK_ERR_INVALID_ARGUMENT = 1,
  QLK_ERR_CONFIG = 2,
  QLK_ERR_IO = 3,
  QLK_ERR_HASH_MISMATCH = 4,
  QLK_ERR_MISSING_TABLES = 5,
  QLK_ERR_NOT_CONVERGED = 6,
  QLK_ERR_ZERO_LIKELIHOOD = 7,
  QLK_ERR_PROTOCOL = 8,
  QLK_ERR_INTERNAL = 99
} qlk_status;

typedef struct qlk_runtime qlk_runtime;
typedef struct qlk_server qlk_server;

QLK_API const char* qlk_version(void);
QLK_API const char* qlk_last_error(void);
QLK_API const char* qlk_status_name(qlk_status status);
QLK_API void qlk_string_free(char* s);

/* Parses and validates a config file; *out_json receives the normalized
 * config with every default filled in. */
QLK_API qlk_status qlk_config_check(const char* config_path, char** out_json);

/* ---- tables ---------------------------------------------------------- */

/* Called once per solved (agent, level, lambda) with a JSON object
 * {"agent","level","lambda","sweeps"}. */
typedef void (*qlk_progress_fn)(const char* event_json, void* user);

typedef struct qlk_solve_options {
  const char* tables_path; /* NULL: <config stem>.tables next to the config */
  int force;               /* re-solve even on a cache hit */
  qlk_progress_fn progress;
  void* progress_user;
} qlk_solve_options;

QLK_API void qlk_solve_options_init(qlk_solve_options* opts);

/* Solves and caches tables. *cache_hit (optional) is set to 1 when valid
 * tables for this config already existed. *out_path (optional) receives
 * the tables path. */
QLK_API qlk_status qlk_solve(const char* config_path, const qlk_solve_options* opts,
                             int* cache_hit, char** out_path);

/* ---- runtime --------------------------------------------------------- */

/* Loads config and previously solved tables. Fails with
 * QLK_ERR_MISSING_TABLES when they have not been solved. */
QLK_API qlk_status qlk_runtime_open(const char* config_path, const char* tables_path,
                                    qlk_runtime** out);
QLK_API void qlk_runtime_free(qlk_runtime* rt);
/* 16 hex digits plus the terminator: buf must hold at least 17 bytes. */
QLK_API qlk_status qlk_runtime_config_hash(const qlk_runtime* rt, char* buf, size_t len);

/* ---- episodes -------------------------------------------------------- */

typedef struct qlk_run_options {
  const char* planner; /* "ours", "blp1", "qlk"; NULL keeps the config's */
  int has_seed;
  uint64_t seed;
  int has_eta0;
  double eta0;
  int has_budget_ms;
  double budget_ms;
  long max_simulations; /* > 0 caps simulations per decision */
  int has_true_theta;
  int true_k;
  double true_lambda;
  int has_random_start;
  double random_start_m; /* human start uniform within +-m of the robot */
  int record_diagnostics;
} qlk_run_options;

QLK_API void qlk_run_options_init(qlk_run_options* opts);

/* Runs one episode, writes its JSON-lines trace to trace_path and returns
 * the summary record as JSON. */
QLK_API qlk_status qlk_run_episode(const qlk_runtime* rt, const qlk_run_options* opts,
                                   const char* trace_path, char** out_summary_json);

typedef struct qlk_batch_options {
  const char* planners; /* comma-separated, e.g. "ours,blp1"; NULL: config's */
  int has_seed;
  uint64_t seed; /* base seed; episode i uses seed + i */
  int has_eta0;
  double eta0;
  int has_budget_ms;
  double budget_ms;
  long max_simulations;
  int has_random_start;
  double random_start_m;
  int episodes;   /* per cell; <= 0 uses the config's repetitions */
  int all_types;  /* sweep every theta of the latent space */
  int workers;    /* 0 = hardware concurrency */
  int write_traces;
} qlk_batch_options;

QLK_API void qlk_batch_options_init(qlk_batch_options* opts);

/* Runs a sweep and writes report.json, metrics.csv, curves.csv (and
 * traces/ when requested) into out_dir. Returns the report JSON. */
QLK_API qlk_status qlk_run_batch(const qlk_runtime* rt, const qlk_batch_options* opts,
                                 const char* out_dir, char** out_report_json);

/* Re-steps the dynamics of a trace. format is "text" or "csv". *closed is
 * set to 1 when every recorded successor was reproduced. */
QLK_API qlk_status qlk_replay(const qlk_runtime* rt, const char* trace_path, const char* format,
                              char** out, int* closed);

/* ---- interaction service --------------------------------------------- */

typedef struct qlk_serve_options {
  const char* bind;       /* NULL: config's */
  int port;               /* < 0: config's; 0 picks a free port */
  const char* static_dir; /* NULL: config's */
  const char* trace_dir;  /* NULL: traces are not persisted */
  const char* planner;    /* NULL: "ours" */
  int has_seed;
  uint64_t seed;
  int has_budget_ms;
  double budget_ms;
  int tick_ms;            /* <= 0: config's */
  int multi_session;      /* < 0: config's */
  int quiet;
} qlk_serve_options;

QLK_API void qlk_serve_options_init(qlk_serve_options* opts);

/* Starts serving in background threads. The runtime must outlive the
 * server. */
QLK_API qlk_status qlk_server_start(const qlk_runtime* rt, const qlk_serve_options* opts,
                                    qlk_server** out);
QLK_API int qlk_server_port(const qlk_server* srv);
/* Blocks until qlk_server_stop() is called from another thread. */
QLK_API qlk_status qlk_server_wait(qlk_server* srv);
QLK_API qlk_status qlk_server_stop(qlk_server* srv);
QLK_API void qlk_server_free(qlk_server* srv);

#ifdef __cplusplus
}
#endif

#endif
