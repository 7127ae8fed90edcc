#include "qlk_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <limits>
#include <set>
#include <sstream>

#include "error.hpp"

namespace qlk {

namespace {

constexpr double kLambdaEps = 1e-12;

bool same_lambda(double a, double b) { return std::abs(a - b) <= kLambdaEps; }

// Joint action index helpers: the opponent's action fills the other slot.
inline int robot_slot(Agent agent, int own, int opp) { return agent == Agent::kRobot ? own : opp; }
inline int human_slot(Agent agent, int own, int opp) { return agent == Agent::kRobot ? opp : own; }

std::vector<double> state_rewards(const GameModel& model, const RewardWeights& w) {
  std::vector<double> r(model.num_states());
  for (StateId s = 0; s < model.num_states(); ++s) r[s] = model.reward(s, w);
  return r;
}

std::vector<double> action_rewards(const GameModel& model, const RewardWeights& w) {
  const int nr = model.num_actions(Agent::kRobot), nh = model.num_actions(Agent::kHuman);
  std::vector<double> c(static_cast<std::size_t>(nr) * nh);
  for (int a = 0; a < nr; ++a)
    for (int b = 0; b < nh; ++b) c[a * nh + b] = model.action_reward(a, b, w);
  return c;
}

// Holds the per-agent pieces shared by backups and Q evaluation.
struct Backup {
  const GameModel& model;
  const TransitionTable& tt;
  Agent agent;
  const PolicyTable& opponent;
  double gamma;
  int n_own, n_opp, nh;
  std::vector<double> r_state;
  std::vector<double> c_action;

  Backup(const GameModel& m, const TransitionTable& t, Agent a, const PolicyTable& opp, double g)
      : model(m),
        tt(t),
        agent(a),
        opponent(opp),
        gamma(g),
        n_own(m.num_actions(a)),
        n_opp(m.num_actions(opponent_of(a))),
        nh(m.num_actions(Agent::kHuman)),
        r_state(state_rewards(m, m.weights(a))),
        c_action(action_rewards(m, m.weights(a))) {
    if (opp.num_actions != n_opp || opp.probs.size() != m.num_states() * n_opp)
      throw Error(ErrorCode::kInvalidArgument, "opponent policy table shape mismatch");
  }

  static Agent opponent_of(Agent a) { return qlk::opponent(a); }

  // W(s') = r(s') + gamma * V(s') with zero continuation at absorbing s'.
  void continuation(const std::vector<double>& v, std::vector<double>& w) const {
    for (StateId s = 0; s < model.num_states(); ++s)
      w[s] = r_state[s] + (model.is_absorbing(s) ? 0.0 : gamma * v[s]);
  }

  double q(const std::vector<double>& w, StateId s, int own) const {
    const auto p = opponent.row(s);
    double q = 0.0;
    for (int o = 0; o < n_opp; ++o) {
      if (p[o] == 0.0) continue;
      const int ar = robot_slot(agent, own, o), ah = human_slot(agent, own, o);
      q += p[o] * (w[tt.next(s, ar, ah)] + c_action[ar * nh + ah]);
    }
    return q;
  }

  double best(const std::vector<double>& w, StateId s) const {
    double b = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < n_own; ++a) {
      if (!model.action_valid(agent, s, a)) continue;
      b = std::max(b, q(w, s, a));
    }
    return b;
  }
};

}  // namespace

std::vector<double> quantal_response(std::span<const double> q, double lambda,
                                     std::span<const bool> mask) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw Error(ErrorCode::kInvalidArgument, "quantal_response: lambda must be positive");
  if (!mask.empty() && mask.size() != q.size())
    throw Error(ErrorCode::kInvalidArgument, "quantal_response: mask size mismatch");
  double qmax = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (!std::isfinite(q[a]))
      throw Error(ErrorCode::kInvalidArgument, "quantal_response: non-finite q entry");
    if (mask.empty() || mask[a]) qmax = std::max(qmax, q[a]);
  }
  std::vector<double> p(q.size(), 0.0);
  if (qmax == -std::numeric_limits<double>::infinity())
    throw Error(ErrorCode::kInvalidArgument, "quantal_response: no admissible action");
  double z = 0.0;
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (!mask.empty() && !mask[a]) continue;
    p[a] = std::exp(lambda * (q[a] - qmax));
    z += p[a];
  }
  for (double& x : p) x /= z;
  return p;
}

TransitionTable::TransitionTable(const GameModel& model)
    : nr_(model.num_actions(Agent::kRobot)), nh_(model.num_actions(Agent::kHuman)) {
  next_.resize(model.num_states() * nr_ * nh_);
  std::size_t i = 0;
  for (StateId s = 0; s < model.num_states(); ++s)
    for (int a = 0; a < nr_; ++a)
      for (int b = 0; b < nh_; ++b) next_[i++] = model.step(s, a, b);
}

double q_value(const GameModel& model, const TransitionTable& tt, Agent agent,
               const PolicyTable& opponent, const ValueTable& values, StateId s, int own_action,
               double gamma) {
  const auto p = opponent.row(s);
  const auto& w = model.weights(agent);
  const int n_opp = model.num_actions(qlk::opponent(agent));
  double q = 0.0;
  for (int o = 0; o < n_opp; ++o) {
    if (p[o] == 0.0) continue;
    const int ar = robot_slot(agent, own_action, o), ah = human_slot(agent, own_action, o);
    const StateId next = tt.next(s, ar, ah);
    const double cont = model.is_absorbing(next) ? 0.0 : gamma * values.values[next];
    q += p[o] * (model.transition_reward(ar, ah, next, w) + cont);
  }
  return q;
}

double q_value(const GameModel& model, Agent agent, const PolicyTable& opponent,
               const ValueTable& values, StateId s, int own_action, double gamma) {
  const auto p = opponent.row(s);
  const auto& w = model.weights(agent);
  const int n_opp = model.num_actions(qlk::opponent(agent));
  double q = 0.0;
  for (int o = 0; o < n_opp; ++o) {
    if (p[o] == 0.0) continue;
    const int ar = robot_slot(agent, own_action, o), ah = human_slot(agent, own_action, o);
    const StateId next = model.step(s, ar, ah);
    const double cont = model.is_absorbing(next) ? 0.0 : gamma * values.values[next];
    q += p[o] * (model.transition_reward(ar, ah, next, w) + cont);
  }
  return q;
}

ValueTable value_iteration(const GameModel& model, const TransitionTable& tt, Agent agent,
                           const PolicyTable& opponent, int level, double lambda, double gamma,
                           double tolerance, int max_sweeps) {
  const Backup bk(model, tt, agent, opponent, gamma);
  const std::size_t n = model.num_states();
  std::vector<double> v(n, 0.0), vn(n, 0.0), w(n, 0.0);
  ValueTable out;
  out.agent = agent;
  out.level = level;
  out.lambda = lambda;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    bk.continuation(v, w);
    double delta = 0.0;
    for (StateId s = 0; s < n; ++s) {
      vn[s] = model.is_absorbing(s) ? 0.0 : bk.best(w, s);
      delta = std::max(delta, std::abs(vn[s] - v[s]));
    }
    v.swap(vn);
    if (delta < tolerance) {
      out.values = std::move(v);
      out.sweeps = sweep;
      out.residual = delta;
      return out;
    }
  }
  std::ostringstream msg;
  msg << "value iteration for " << to_string(agent) << " level " << level << " lambda " << lambda
      << " did not converge within " << max_sweeps << " sweeps";
  throw NotConvergedError(msg.str());
}

double bellman_residual(const GameModel& model, const TransitionTable& tt, Agent agent,
                        const PolicyTable& opponent, const ValueTable& values, double gamma) {
  const Backup bk(model, tt, agent, opponent, gamma);
  std::vector<double> w(model.num_states());
  bk.continuation(values.values, w);
  double r = 0.0;
  for (StateId s = 0; s < model.num_states(); ++s) {
    const double b = model.is_absorbing(s) ? 0.0 : bk.best(w, s);
    r = std::max(r, std::abs(b - values.values[s]));
  }
  return r;
}

PolicyTable extract_policy(const GameModel& model, const TransitionTable& tt, Agent agent,
                           const PolicyTable& opponent, const ValueTable& values, double lambda,
                           double gamma) {
  const Backup bk(model, tt, agent, opponent, gamma);
  std::vector<double> w(model.num_states());
  bk.continuation(values.values, w);
  PolicyTable pt;
  pt.agent = agent;
  pt.level = values.level;
  pt.lambda = lambda;
  pt.num_actions = bk.n_own;
  pt.probs.resize(model.num_states() * bk.n_own);
  std::vector<double> q(bk.n_own);
  std::unique_ptr<bool[]> mask(new bool[bk.n_own]);
  for (StateId s = 0; s < model.num_states(); ++s) {
    for (int a = 0; a < bk.n_own; ++a) {
      mask[a] = model.action_valid(agent, s, a);
      q[a] = mask[a] ? bk.q(w, s, a) : 0.0;
    }
    const auto p = quantal_response(q, lambda, std::span<const bool>(mask.get(), bk.n_own));
    std::copy(p.begin(), p.end(), pt.row(s).begin());
  }
  return pt;
}

Level0Result solve_level0(const GameModel& model, Agent agent, const SolverConfig& cfg) {
  const bool never_yield = cfg.level0 == Level0Mode::kNeverYield;
  RewardWeights w = model.weights(agent);
  if (never_yield) w.deactivate_safety_feature = true;
  const int n_own = model.num_actions(agent);
  const std::size_t n = model.num_states();

  // The frozen opponent is taken to apply zero acceleration when it
  // contributes to action features.
  const int opp_idle = [&] {
    const auto& acc = model.config().actions.accelerations;
    int best = 0;
    for (int i = 0; i < static_cast<int>(acc.size()); ++i)
      if (std::abs(acc[i]) < std::abs(acc[best])) best = i;
    if (agent == Agent::kHuman) {
      // Robot idle = zero acceleration, no lateral motion.
      const auto& lat = model.config().actions.lateral_speeds;
      int lbest = 0;
      for (int i = 0; i < static_cast<int>(lat.size()); ++i)
        if (std::abs(lat[i]) < std::abs(lat[lbest])) lbest = i;
      return best * static_cast<int>(lat.size()) + lbest;
    }
    return best;
  }();

  auto absorbing = [&](StateId s) {
    if (!never_yield) return model.is_absorbing(s);
    return model.is_merged(s) || model.at_road_end(s);
  };

  std::vector<StateId> next(n * n_own);
  std::vector<double> cost(n_own);
  for (int a = 0; a < n_own; ++a) {
    const int ar = robot_slot(agent, a, opp_idle), ah = human_slot(agent, a, opp_idle);
    cost[a] = model.action_reward(ar, ah, w);
  }
  for (StateId s = 0; s < n; ++s)
    for (int a = 0; a < n_own; ++a) next[s * n_own + a] = model.step_frozen(s, agent, a);
  std::vector<double> r(n);
  std::vector<std::uint8_t> absorb(n);
  for (StateId s = 0; s < n; ++s) {
    r[s] = model.reward(s, w);
    absorb[s] = absorbing(s);
  }

  std::vector<double> v(n, 0.0), vn(n, 0.0), cont(n, 0.0);
  int sweeps = 0;
  double delta = 0.0;
  for (;;) {
    if (++sweeps > cfg.max_sweeps)
      throw NotConvergedError(std::string("level-0 value iteration for ") + to_string(agent) +
                              " did not converge");
    for (StateId s = 0; s < n; ++s) cont[s] = r[s] + (absorb[s] ? 0.0 : cfg.gamma * v[s]);
    delta = 0.0;
    for (StateId s = 0; s < n; ++s) {
      double b = -std::numeric_limits<double>::infinity();
      if (absorb[s]) {
        b = 0.0;
      } else {
        for (int a = 0; a < n_own; ++a) {
          if (!model.action_valid(agent, s, a)) continue;
          b = std::max(b, cont[next[s * n_own + a]] + cost[a]);
        }
      }
      vn[s] = b;
      delta = std::max(delta, std::abs(vn[s] - v[s]));
    }
    v.swap(vn);
    if (delta < cfg.tolerance) break;
  }

  Level0Result out;
  out.values.agent = agent;
  out.values.level = 0;
  out.values.lambda = kLevel0Lambda;
  out.values.sweeps = sweeps;
  out.values.residual = delta;
  for (StateId s = 0; s < n; ++s) cont[s] = r[s] + (absorb[s] ? 0.0 : cfg.gamma * v[s]);
  out.values.values = std::move(v);
  out.policy.agent = agent;
  out.policy.level = 0;
  out.policy.lambda = kLevel0Lambda;
  out.policy.num_actions = n_own;
  out.policy.probs.assign(n * n_own, 0.0);
  for (StateId s = 0; s < n; ++s) {
    int best = -1;
    double bq = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < n_own; ++a) {
      if (!model.action_valid(agent, s, a)) continue;
      const double q = cont[next[s * n_own + a]] + cost[a];
      if (best < 0 || q > bq + 1e-12) {
        best = a;
        bq = q;
      }
    }
    out.policy.row(s)[best] = 1.0;
  }
  return out;
}

const PolicyTable* QlkTables::find_policy(Agent agent, int level, double lambda) const {
  for (const auto& p : policies)
    if (p.agent == agent && p.level == level && (level == 0 || same_lambda(p.lambda, lambda)))
      return &p;
  return nullptr;
}

const ValueTable* QlkTables::find_value(Agent agent, int level, double lambda) const {
  for (const auto& v : values)
    if (v.agent == agent && v.level == level && (level == 0 || same_lambda(v.lambda, lambda)))
      return &v;
  return nullptr;
}

const PolicyTable& QlkTables::policy(Agent agent, int level, double lambda) const {
  if (const auto* p = find_policy(agent, level, lambda)) return *p;
  std::ostringstream msg;
  msg << "missing policy table for " << to_string(agent) << " level " << level << " lambda "
      << lambda;
  throw MissingTablesError(msg.str());
}

const ValueTable& QlkTables::value(Agent agent, int level, double lambda) const {
  if (const auto* v = find_value(agent, level, lambda)) return *v;
  std::ostringstream msg;
  msg << "missing value table for " << to_string(agent) << " level " << level << " lambda "
      << lambda;
  throw MissingTablesError(msg.str());
}

QlkTables solve_qlk(const GameModel& model, const SolverConfig& cfg, std::uint64_t config_hash,
                    const std::function<void(const SolveProgress&)>& progress) {
  if (cfg.lambdas.empty()) throw ConfigError("solver: the rationality set Lambda is empty");
  if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw ConfigError("solver: gamma must be in [0,1)");
  if (!(cfg.tolerance > 0.0)) throw ConfigError("solver: tolerance must be > 0");
  if (cfg.k_max < 1) throw ConfigError("solver: k_max must be >= 1");
  std::vector<double> lambdas;
  for (double l : cfg.lambdas) {
    if (!(l > 0.0)) throw ConfigError("solver: every lambda must be > 0");
    if (std::none_of(lambdas.begin(), lambdas.end(), [&](double x) { return same_lambda(x, l); }))
      lambdas.push_back(l);
  }
  if (std::none_of(lambdas.begin(), lambdas.end(), [](double x) { return same_lambda(x, 1.0); }))
    lambdas.push_back(1.0);
  std::sort(lambdas.begin(), lambdas.end());

  const TransitionTable tt(model);
  QlkTables out;
  out.config_hash = config_hash;
  for (Agent a : {Agent::kRobot, Agent::kHuman}) {
    Level0Result l0 = solve_level0(model, a, cfg);
    if (progress) progress({a, 0, kLevel0Lambda, l0.values.sweeps});
    out.values.push_back(std::move(l0.values));
    out.policies.push_back(std::move(l0.policy));
  }

  struct Job {
    Agent agent;
    int level;
    double lambda;
  };
  auto run = [&](const std::vector<Job>& jobs) {
    // Levels are a barrier; the (agent, lambda) pairs inside one level are
    // independent and run concurrently.
    std::vector<std::future<std::pair<ValueTable, PolicyTable>>> futs;
    for (const Job& j : jobs) {
      const PolicyTable& opp = out.policy(opponent(j.agent), j.level - 1, j.lambda);
      futs.push_back(std::async(std::launch::async, [&, j, opp_ptr = &opp] {
        ValueTable v = value_iteration(model, tt, j.agent, *opp_ptr, j.level, j.lambda, cfg.gamma,
                                       cfg.tolerance, cfg.max_sweeps);
        PolicyTable p = extract_policy(model, tt, j.agent, *opp_ptr, v, j.lambda, cfg.gamma);
        return std::make_pair(std::move(v), std::move(p));
      }));
    }
    std::vector<std::pair<ValueTable, PolicyTable>> results;
    for (auto& f : futs) results.push_back(f.get());
    for (auto& [v, p] : results) {
      if (progress) progress({v.agent, v.level, v.lambda, v.sweeps});
      out.values.push_back(std::move(v));
      out.policies.push_back(std::move(p));
    }
  };

  for (int k = 1; k <= cfg.k_max; ++k) {
    std::vector<Job> jobs;
    for (Agent a : {Agent::kRobot, Agent::kHuman})
      for (double l : lambdas) jobs.push_back({a, k, l});
    out.policies.reserve(out.policies.size() + jobs.size() + 1);
    run(jobs);
  }
  run({{Agent::kRobot, cfg.k_max + 1, 1.0}});
  return out;
}

namespace {

constexpr char kMagic[8] = {'Q', 'L', 'K', 'T', 'A', 'B', 'L', 'E'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error(ErrorCode::kIo, "truncated table file");
  return v;
}

void put_axis(std::ostream& os, const Axis& a) {
  put<std::int32_t>(os, a.size());
  put<double>(os, a.min());
  put<double>(os, a.max());
}

}  // namespace

void save_tables(const QlkTables& tables, const GameModel& model,
                 const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::kIo, "cannot write table file " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kFormatVersion);
    put<std::uint64_t>(os, tables.config_hash);
    put_axis(os, model.x_robot());
    put_axis(os, model.y_robot());
    put_axis(os, model.x_human());
    put_axis(os, model.v_robot());
    put_axis(os, model.v_human());
    put<std::uint32_t>(os, model.num_actions(Agent::kRobot));
    put<std::uint32_t>(os, model.num_actions(Agent::kHuman));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tables.values.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tables.policies.size()));
    for (const auto& v : tables.values) {
      put<std::uint8_t>(os, static_cast<std::uint8_t>(v.agent));
      put<std::int32_t>(os, v.level);
      put<double>(os, v.lambda);
      put<std::int32_t>(os, v.sweeps);
      put<double>(os, v.residual);
      put<std::uint64_t>(os, v.values.size());
      os.write(reinterpret_cast<const char*>(v.values.data()),
               static_cast<std::streamsize>(v.values.size() * sizeof(double)));
    }
    for (const auto& p : tables.policies) {
      put<std::uint8_t>(os, static_cast<std::uint8_t>(p.agent));
      put<std::int32_t>(os, p.level);
      put<double>(os, p.lambda);
      put<std::int32_t>(os, p.num_actions);
      put<std::uint64_t>(os, p.probs.size());
      os.write(reinterpret_cast<const char*>(p.probs.data()),
               static_cast<std::streamsize>(p.probs.size() * sizeof(double)));
    }
    if (!os) throw Error(ErrorCode::kIo, "failed writing table file " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::optional<std::uint64_t> peek_tables_hash(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) return std::nullopt;
  try {
    if (get<std::uint32_t>(is) != kFormatVersion) return std::nullopt;
    return get<std::uint64_t>(is);
  } catch (const Error&) {
    return std::nullopt;
  }
}

QlkTables load_tables(const GameModel& model, std::uint64_t expected_hash,
                      const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingTablesError("table file not found: " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw Error(ErrorCode::kIo, path.string() + " is not a table file");
  const auto version = get<std::uint32_t>(is);
  if (version != kFormatVersion)
    throw Error(ErrorCode::kIo, "unsupported table file version " + std::to_string(version));
  QlkTables t;
  t.config_hash = get<std::uint64_t>(is);
  if (t.config_hash != expected_hash)
    throw Error(ErrorCode::kHashMismatch, "table file " + path.string() + " was solved for config " +
                                              hash_hex(t.config_hash) + ", expected " +
                                              hash_hex(expected_hash) + "; re-run solve");
  for (const Axis* a : {&model.x_robot(), &model.y_robot(), &model.x_human(), &model.v_robot(),
                        &model.v_human()}) {
    const auto cells = get<std::int32_t>(is);
    const auto mn = get<double>(is);
    const auto mx = get<double>(is);
    if (cells != a->size() || mn != a->min() || mx != a->max())
      throw Error(ErrorCode::kHashMismatch, "table file axis metadata does not match the grid");
  }
  if (get<std::uint32_t>(is) != static_cast<std::uint32_t>(model.num_actions(Agent::kRobot)) ||
      get<std::uint32_t>(is) != static_cast<std::uint32_t>(model.num_actions(Agent::kHuman)))
    throw Error(ErrorCode::kHashMismatch, "table file action counts do not match");
  const auto nv = get<std::uint32_t>(is);
  const auto np = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < nv; ++i) {
    ValueTable v;
    v.agent = static_cast<Agent>(get<std::uint8_t>(is));
    v.level = get<std::int32_t>(is);
    v.lambda = get<double>(is);
    v.sweeps = get<std::int32_t>(is);
    v.residual = get<double>(is);
    const auto n = get<std::uint64_t>(is);
    if (n != model.num_states()) throw Error(ErrorCode::kIo, "value table size mismatch");
    v.values.resize(n);
    is.read(reinterpret_cast<char*>(v.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw Error(ErrorCode::kIo, "truncated table file");
    t.values.push_back(std::move(v));
  }
  for (std::uint32_t i = 0; i < np; ++i) {
    PolicyTable p;
    p.agent = static_cast<Agent>(get<std::uint8_t>(is));
    p.level = get<std::int32_t>(is);
    p.lambda = get<double>(is);
    p.num_actions = get<std::int32_t>(is);
    const auto n = get<std::uint64_t>(is);
    if (n != model.num_states() * static_cast<std::uint64_t>(p.num_actions))
      throw Error(ErrorCode::kIo, "policy table size mismatch");
    p.probs.resize(n);
    is.read(reinterpret_cast<char*>(p.probs.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw Error(ErrorCode::kIo, "truncated table file");
    t.policies.push_back(std::move(p));
  }
  return t;
}

}  // namespace qlk
