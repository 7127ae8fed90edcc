#include "sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "error.hpp"

namespace qlk {

namespace {

constexpr int kDeadlockWindow = 8;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

int sample_row(std::span<const double> p, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  int last = 0;
  for (int a = 0; a < static_cast<int>(p.size()); ++a) {
    if (p[a] <= 0.0) continue;
    last = a;
    acc += p[a];
    if (u < acc) return a;
  }
  return last;
}

bool deadlocked(const GameModel& g, const std::vector<JointState>& visited) {
  if (static_cast<int>(visited.size()) < kDeadlockWindow + 1) return false;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = visited.size() - kDeadlockWindow - 1; i < visited.size(); ++i) {
    const double gap = visited[i].x_r - visited[i].x_h;
    lo = std::min(lo, gap);
    hi = std::max(hi, gap);
  }
  return hi - lo < g.x_robot().step() - 1e-9;
}

nlohmann::json theta_json(const LatentState& t) { return {{"k", t.level}, {"lambda", t.lambda}}; }

}  // namespace

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::kMerged: return "merged";
    case Outcome::kCollision: return "collision";
    case Outcome::kDeadlock: return "deadlock";
    case Outcome::kTimeout: return "timeout";
  }
  return "timeout";
}

Outcome parse_outcome(const std::string& s) {
  if (s == "merged") return Outcome::kMerged;
  if (s == "collision") return Outcome::kCollision;
  if (s == "deadlock") return Outcome::kDeadlock;
  if (s == "timeout") return Outcome::kTimeout;
  throw Error(ErrorCode::kInvalidArgument, "unknown outcome '" + s + "'");
}

Outcome classify_outcome(const GameModel& g, const std::vector<JointState>& visited) {
  const StateId last = g.to_index(visited.back());
  if (!g.is_safe(last)) return Outcome::kCollision;
  if (g.is_merged(last)) return Outcome::kMerged;
  if (deadlocked(g, visited)) return Outcome::kDeadlock;
  return Outcome::kTimeout;
}

bool is_near_miss(const GameModel& g, const JointState& s) {
  const auto& geo = g.config().geometry;
  const double gap = std::abs(s.x_r - s.x_h);
  return g.is_safe(s) && std::abs(s.y_r - g.human_lane_y()) < geo.car_width &&
         gap - geo.car_length < geo.car_length;
}

std::optional<double> EpisodeTrace::tm(double dt) const {
  if (outcome != Outcome::kMerged) return std::nullopt;
  return static_cast<double>(steps.size()) * dt;
}

int EpisodeTrace::first_confident_step(double threshold) const {
  for (std::size_t t = 0; t < true_type_prob.size(); ++t)
    if (true_type_prob[t] > threshold) return static_cast<int>(t);
  return static_cast<int>(steps.size());
}

EpisodeSpec make_spec(const Config& cfg, RobotController controller, std::uint64_t seed, int id) {
  EpisodeSpec s;
  s.scenario = cfg.scenario;
  s.scenario.controller = controller;
  s.planner = cfg.planner;
  if (controller == RobotController::kBlp1) s.planner.eta0 = 0.0;
  s.seed = seed;
  s.id = id;
  return s;
}

EpisodeTrace run_episode(const Runtime& rt, const EpisodeSpec& spec, PlannerObserver* observer) {
  const GameModel& g = rt.model();
  const HumanModel& hm = rt.human_model();
  const ScenarioConfig& sc = spec.scenario;
  if (sc.episode_cap < 1) throw ConfigError("scenario.episode_cap must be >= 1");
  const PolicyTable& human_policy =
      rt.tables().policy(Agent::kHuman, sc.true_theta.level, sc.true_theta.lambda);
  const PolicyTable* robot_policy = nullptr;
  if (sc.controller == RobotController::kQlk)
    robot_policy = &rt.tables().policy(Agent::kRobot, sc.robot_theta.level, sc.robot_theta.lambda);
  const int true_index = hm.space().index_of(sc.true_theta);

  // Independent streams: environment (start + human), robot policy sampling,
  // planner observation sampling.
  std::mt19937_64 env_rng(splitmix64(spec.seed));
  std::mt19937_64 robot_rng(splitmix64(spec.seed ^ 0x5151ull));

  EpisodeTrace tr;
  tr.spec = spec;
  JointState init = sc.initial;
  if (sc.random_start_m > 0.0)
    init.x_h = init.x_r +
               std::uniform_real_distribution<double>(-sc.random_start_m, sc.random_start_m)(env_rng);
  StateId s = g.to_index(init);
  tr.initial = g.from_index(s);

  std::optional<Planner> planner;
  if (sc.controller != RobotController::kQlk) {
    PlannerParams pp = spec.planner;
    if (sc.controller == RobotController::kBlp1) pp.eta0 = 0.0;
    pp.seed = splitmix64(spec.seed ^ 0xa11ceull);
    planner.emplace(hm, pp);
    planner->set_observer(observer);
  }

  Belief b = Belief::uniform(s, hm.space().size());
  auto true_prob = [&](const Belief& bb) { return true_index >= 0 ? bb.latent[true_index] : 0.0; };
  tr.true_type_prob.push_back(true_prob(b));
  std::vector<JointState> visited{tr.initial};
  tr.min_gap = std::abs(tr.initial.x_r - tr.initial.x_h);

  for (int t = 0; t < sc.episode_cap && !g.is_absorbing(s); ++t) {
    StepRecord rec;
    rec.t = t;
    rec.state = g.from_index(s);
    if (planner) {
      PlanResult pr = planner->plan(b);
      rec.robot_action = pr.action;
      tr.max_step_risk = std::max(tr.max_step_risk, pr.diagnostics.chosen_risk);
      if (pr.diagnostics.fallback) ++tr.fallbacks;
      if (spec.record_diagnostics) rec.diagnostics = to_json(g, pr.diagnostics);
    } else {
      rec.robot_action = sample_row(robot_policy->row(s), robot_rng);
    }
    rec.human_action = sample_row(human_policy.row(s), env_rng);
    const StateId next = g.step(s, rec.robot_action, rec.human_action);
    rec.next_state = g.from_index(next);
    rec.reward = g.transition_reward(rec.robot_action, rec.human_action, next,
                                     g.weights(Agent::kRobot));
    rec.info_gain = info_gain(hm, b, rec.robot_action);
    try {
      b = update_belief(hm, b, rec.robot_action, next, rt.config().belief.floor);
    } catch (const ZeroLikelihoodError&) {
      b = Belief::uniform(next, hm.space().size());
      rec.belief_reset = true;
    }
    rec.belief = b;
    tr.true_type_prob.push_back(true_prob(b));
    tr.steps.push_back(std::move(rec));
    s = next;
    const JointState js = g.from_index(s);
    visited.push_back(js);
    tr.min_gap = std::min(tr.min_gap, std::abs(js.x_r - js.x_h));
    if (is_near_miss(g, js)) tr.near_miss = true;
  }

  tr.outcome = classify_outcome(g, visited);
  if (tr.outcome == Outcome::kMerged) tr.robot_ahead = visited.back().x_r > visited.back().x_h;
  return tr;
}

std::vector<EpisodeTrace> run_batch(const Runtime& rt, const std::vector<EpisodeSpec>& specs,
                                    int workers, const ObserverFor& observer_for) {
  std::vector<EpisodeTrace> out(specs.size());
  if (specs.empty()) return out;
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min<int>(workers, static_cast<int>(specs.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      try {
        PlannerObserver* obs = observer_for ? observer_for(specs[i].id) : nullptr;
        out[i] = run_episode(rt, specs[i], obs);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = specs.size();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::stable_sort(out.begin(), out.end(),
                   [](const EpisodeTrace& a, const EpisodeTrace& b) { return a.spec.id < b.spec.id; });
  return out;
}

std::vector<CellMetrics> aggregate(const std::vector<EpisodeTrace>& traces, double dt) {
  using Key = std::tuple<std::string, int, double>;
  std::map<Key, std::vector<const EpisodeTrace*>> cells;
  for (const auto& t : traces)
    cells[{to_string(t.spec.scenario.controller), t.spec.scenario.true_theta.level,
           t.spec.scenario.true_theta.lambda}]
        .push_back(&t);
  std::vector<CellMetrics> out;
  for (const auto& [key, eps] : cells) {
    CellMetrics m;
    std::tie(m.controller, m.k, m.lambda) = key;
    m.episodes = static_cast<int>(eps.size());
    std::vector<double> tms;
    double conf = 0.0;
    std::size_t longest = 0;
    for (const auto* e : eps) longest = std::max(longest, e->true_type_prob.size());
    m.inference_curve.assign(longest, 0.0);
    for (const auto* e : eps) {
      switch (e->outcome) {
        case Outcome::kMerged: ++m.merged; break;
        case Outcome::kCollision: ++m.collisions; break;
        case Outcome::kDeadlock: ++m.deadlocks; break;
        case Outcome::kTimeout: ++m.timeouts; break;
      }
      if (e->near_miss) ++m.near_misses;
      if (auto tm = e->tm(dt)) tms.push_back(*tm);
      conf += e->first_confident_step();
      // Past the end of an episode the belief stays where it stopped.
      for (std::size_t t = 0; t < longest; ++t)
        m.inference_curve[t] += e->true_type_prob[std::min(t, e->true_type_prob.size() - 1)];
    }
    for (double& v : m.inference_curve) v /= static_cast<double>(eps.size());
    m.rs = static_cast<double>(m.merged) / static_cast<double>(m.episodes);
    m.first_confident_mean = conf / static_cast<double>(m.episodes);
    m.tm_n = static_cast<int>(tms.size());
    if (!tms.empty()) {
      double sum = 0.0;
      for (double x : tms) sum += x;
      m.tm_mean = sum / static_cast<double>(tms.size());
      double var = 0.0;
      for (double x : tms) var += (x - m.tm_mean) * (x - m.tm_mean);
      const double sd = tms.size() > 1 ? std::sqrt(var / static_cast<double>(tms.size() - 1)) : 0.0;
      const double half = 1.96 * sd / std::sqrt(static_cast<double>(tms.size()));
      m.tm_ci_low = m.tm_mean - half;
      m.tm_ci_high = m.tm_mean + half;
    }
    out.push_back(std::move(m));
  }
  return out;
}

nlohmann::json report_json(const std::vector<CellMetrics>& cells) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : cells) {
    nlohmann::json tm = nullptr;
    if (m.tm_n > 0) tm = {{"mean", m.tm_mean}, {"ci95", {m.tm_ci_low, m.tm_ci_high}}, {"n", m.tm_n}};
    arr.push_back({{"controller", m.controller},
                   {"k", m.k},
                   {"lambda", m.lambda},
                   {"episodes", m.episodes},
                   {"merged", m.merged},
                   {"collisions", m.collisions},
                   {"deadlocks", m.deadlocks},
                   {"timeouts", m.timeouts},
                   {"near_misses", m.near_misses},
                   {"rs", m.rs},
                   {"tm", tm},
                   {"first_confident_step_mean", m.first_confident_mean},
                   {"inference_curve", m.inference_curve}});
  }
  return {{"schema_version", kTraceSchemaVersion}, {"cells", arr}};
}

std::string report_csv(const std::vector<CellMetrics>& cells) {
  std::ostringstream os;
  os << "controller,k,lambda,episodes,merged,collisions,deadlocks,timeouts,near_misses,rs,"
        "tm_mean,tm_ci_low,tm_ci_high,tm_n,first_confident_step_mean\n";
  os << std::setprecision(10);
  for (const auto& m : cells)
    os << m.controller << ',' << m.k << ',' << m.lambda << ',' << m.episodes << ',' << m.merged
       << ',' << m.collisions << ',' << m.deadlocks << ',' << m.timeouts << ',' << m.near_misses
       << ',' << m.rs << ',' << m.tm_mean << ',' << m.tm_ci_low << ',' << m.tm_ci_high << ','
       << m.tm_n << ',' << m.first_confident_mean << '\n';
  return os.str();
}

std::string curves_csv(const std::vector<CellMetrics>& cells) {
  std::ostringstream os;
  os << "controller,k,lambda,t,p_true\n" << std::setprecision(10);
  for (const auto& m : cells)
    for (std::size_t t = 0; t < m.inference_curve.size(); ++t)
      os << m.controller << ',' << m.k << ',' << m.lambda << ',' << t << ','
         << m.inference_curve[t] << '\n';
  return os.str();
}

nlohmann::json summary_json(const GameModel& g, const EpisodeTrace& tr) {
  return {{"type", "summary"},
          {"outcome", to_string(tr.outcome)},
          {"steps", tr.steps.size()},
          {"tm", tr.tm(g.dt()) ? nlohmann::json(*tr.tm(g.dt())) : nlohmann::json(nullptr)},
          {"robot_ahead", tr.robot_ahead},
          {"min_gap", tr.min_gap},
          {"near_miss", tr.near_miss},
          {"first_confident_step", tr.first_confident_step()},
          {"fallbacks", tr.fallbacks},
          {"aborted", tr.aborted}};
}

void write_trace(std::ostream& os, const Runtime& rt, const EpisodeTrace& tr) {
  const GameModel& g = rt.model();
  const auto& sc = tr.spec.scenario;
  nlohmann::json header = {{"type", "header"},
                           {"schema_version", kTraceSchemaVersion},
                           {"config", rt.config().name},
                           {"config_hash", hash_hex(rt.hash())},
                           {"episode", tr.spec.id},
                           {"seed", tr.spec.seed},
                           {"controller", to_string(sc.controller)},
                           {"eta0", sc.controller == RobotController::kBlp1 ? 0.0 : tr.spec.planner.eta0},
                           {"source", tr.spec.live ? "live" : "sim"},
                           {"true_theta", tr.spec.live ? nlohmann::json(nullptr) : theta_json(sc.true_theta)},
                           {"dt", g.dt()},
                           {"initial", to_json(tr.initial)}};
  if (sc.controller == RobotController::kQlk) header["robot_theta"] = theta_json(sc.robot_theta);
  os << header.dump() << '\n';
  for (const auto& r : tr.steps) {
    const RobotAction ra = g.robot_action(r.robot_action);
    nlohmann::json j = {
        {"type", "step"},
        {"t", r.t},
        {"state", to_json(r.state)},
        {"robot_action", {{"index", r.robot_action}, {"accel", ra.accel}, {"lateral", ra.lateral}}},
        {"human_action", {{"index", r.human_action}, {"accel", g.human_action(r.human_action)}}},
        {"next_state", to_json(r.next_state)},
        {"belief", to_json(g, rt.human_model().space(), r.belief)},
        {"reward", r.reward},
        {"info_gain", r.info_gain},
        {"belief_reset", r.belief_reset},
        {"diagnostics", r.diagnostics}};
    os << j.dump() << '\n';
  }
  os << summary_json(g, tr).dump() << '\n';
}

void write_trace(const std::filesystem::path& path, const Runtime& rt, const EpisodeTrace& trace) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::kIo, "cannot write trace " + path.string());
  write_trace(os, rt, trace);
}

ReplayResult replay_trace(const GameModel& model, std::istream& in) {
  ReplayResult res;
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kIo, "trace line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "header") {
      if (j.value("schema_version", -1) != kTraceSchemaVersion)
        throw Error(ErrorCode::kIo, "unsupported trace schema version");
      header = true;
    } else if (type == "step") {
      if (!header) throw Error(ErrorCode::kIo, "trace step before header");
      ReplayRow row;
      row.t = j.at("t").get<int>();
      row.state = joint_state_from_json(j.at("state"));
      row.robot_action = j.at("robot_action").at("index").get<int>();
      row.human_action = j.at("human_action").at("index").get<int>();
      row.recorded_next = joint_state_from_json(j.at("next_state"));
      if (row.robot_action < 0 || row.robot_action >= model.num_actions(Agent::kRobot) ||
          row.human_action < 0 || row.human_action >= model.num_actions(Agent::kHuman))
        throw Error(ErrorCode::kIo, "trace action index out of range at t=" + std::to_string(row.t));
      row.replayed_next = model.from_index(
          model.step(model.to_index(row.state), row.robot_action, row.human_action));
      row.match = row.replayed_next == row.recorded_next;
      res.closed = res.closed && row.match;
      res.rows.push_back(row);
    } else if (type == "summary") {
      res.outcome = j.value("outcome", "");
    }
  }
  if (!header) throw Error(ErrorCode::kIo, "trace has no header");
  return res;
}

std::string replay_csv(const GameModel& model, const ReplayResult& r) {
  std::ostringstream os;
  os << "t,x_r,y_r,x_h,v_r,v_h,robot_accel,robot_lateral,human_accel,next_x_r,next_y_r,next_x_h,"
        "next_v_r,next_v_h,match\n";
  for (const auto& row : r.rows) {
    const RobotAction ra = model.robot_action(row.robot_action);
    const auto& s = row.state;
    const auto& n = row.replayed_next;
    os << row.t << ',' << s.x_r << ',' << s.y_r << ',' << s.x_h << ',' << s.v_r << ',' << s.v_h
       << ',' << ra.accel << ',' << ra.lateral << ',' << model.human_action(row.human_action) << ','
       << n.x_r << ',' << n.y_r << ',' << n.x_h << ',' << n.v_r << ',' << n.v_h << ','
       << (row.match ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string replay_text(const GameModel& model, const ReplayResult& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  for (const auto& row : r.rows) {
    const RobotAction ra = model.robot_action(row.robot_action);
    const auto& s = row.state;
    os << "t=" << std::setw(3) << row.t << "  robot x=" << std::setw(6) << s.x_r
       << " y=" << s.y_r << " v=" << std::setw(5) << s.v_r << "  human x=" << std::setw(6) << s.x_h
       << " v=" << std::setw(5) << s.v_h << "  a_R=(" << ra.accel << ", " << ra.lateral
       << ") a_H=" << model.human_action(row.human_action) << (row.match ? "" : "  MISMATCH")
       << '\n';
  }
  os << "outcome: " << (r.outcome.empty() ? "unknown" : r.outcome) << '\n';
  os << "replay: " << (r.closed ? "closed" : "NOT closed") << '\n';
  return os.str();
}

}  // namespace qlk
