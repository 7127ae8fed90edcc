#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "belief.hpp"
#include "config.hpp"
#include "json.hpp"

namespace qlk {

// eta0 * H(b) / ln|Theta|; zero when |Theta| == 1.
double adaptive_eta(const Belief& b, double eta0);

// belief_reward + eta * info_gain.
double augmented_reward(const HumanModel& hm, const Belief& b, int robot_action, double eta);

// Mixture of the robot's level-(k+1), lambda = 1 values under the belief's
// level marginal.
double terminal_value(const HumanModel& hm, const Belief& b);
double terminal_value(const HumanModel& hm, const PredictedBelief& b);

// Minimum-risk robot action for the predicted one-step beliefs. Ties go to
// the lower (signed) acceleration, then no lateral motion, then index.
int infeasible_fallback(const HumanModel& hm, const Belief& b, std::vector<double>* risks = nullptr);

// Range of the robot's single-step reward over the feature box.
double default_exploration(const GameModel& model);

struct RootChildStats {
  int action = 0;
  double value = 0.0;
  long visits = 0;
  double risk = 0.0;
};

struct PlanDiagnostics {
  long simulations = 0;
  int chosen = 0;
  double chosen_risk = 0.0;
  double eta = 0.0;
  bool fallback = false;
  double elapsed_ms = 0.0;
  std::vector<RootChildStats> root_children;
};

nlohmann::json to_json(const GameModel& model, const PlanDiagnostics& d);

struct PlanResult {
  int action = 0;
  PlanDiagnostics diagnostics;
};

// Instrumentation hooks; default no-ops.
class PlannerObserver {
 public:
  virtual ~PlannerObserver() = default;
  // A child appended under a node; `depth` is the child's step index
  // (1..T) and `risk` the compute_risk of its predicted belief.
  virtual void on_expand(const std::vector<int>& seq, int depth, double risk) {
    (void)seq, (void)depth, (void)risk;
  }
  // Action `action` under `seq` was not expanded: risk >= the step bound.
  virtual void on_prune(const std::vector<int>& seq, int action, double risk) {
    (void)seq, (void)action, (void)risk;
  }
  // Statistics of `seq` after absorbing one more return.
  virtual void on_backup(const std::vector<int>& seq, double ret, double value, long visits) {
    (void)seq, (void)ret, (void)value, (void)visits;
  }
};

// Open-loop chance-constrained Monte-Carlo belief tree search. Single
// threaded per call; instances may be moved between threads.
class Planner {
 public:
  Planner(const HumanModel& hm, PlannerParams params);

  PlanResult plan(const Belief& b);

  const PlannerParams& params() const { return params_; }
  void set_params(const PlannerParams& p);
  double exploration() const { return exploration_; }
  void set_observer(PlannerObserver* o) { observer_ = o; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

 private:
  struct Node {
    int parent = -1;
    int action = -1;
    int depth = 0;
    double value = 0.0;
    long visits = 0;
    double risk = 0.0;
    bool expanded = false;
    bool infeasible = false;
    std::vector<int> children;
  };

  double simulate(int node, const Belief& b, int depth);
  double rollout(const Belief& b, int depth);
  void expand(int node, const Belief& b, int depth);
  int select_child(int node);
  Belief sample_next(const Belief& b, int action, PredictedBelief* pred_out = nullptr);
  int sample_rollout_action(const Belief& b, int depth);
  double step_reward(const Belief& b, int action);
  std::vector<int> sequence(int node) const;

  const HumanModel* hm_;
  PlannerParams params_;
  double exploration_ = 1.0;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
  PlannerObserver* observer_ = nullptr;
};

}  // namespace qlk
