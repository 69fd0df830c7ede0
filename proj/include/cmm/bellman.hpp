#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cmm/function_classes.hpp"
#include "cmm/rela_game.hpp"
#include "cmm/solver.hpp"

namespace cmm {

// Finite MDP. transitions[(s * A + a) * S + s'] = T(s' | s, a);
// rewards[s * A + a] = r(s, a) in [-1, 1]; gamma in [0, 1).
class TabularMDP {
 public:
  TabularMDP(int n_states, int n_actions, std::vector<double> transitions,
             std::vector<double> rewards, double gamma);

  int n_states() const { return s_; }
  int n_actions() const { return a_; }
  double gamma() const { return gamma_; }
  double reward(int s, int a) const { return rewards_[idx(s, a)]; }
  std::span<const double> row(int s, int a) const {
    return {transitions_.data() + idx(s, a) * static_cast<std::size_t>(s_),
            static_cast<std::size_t>(s_)};
  }
  const std::vector<double>& transitions() const { return transitions_; }
  const std::vector<double>& rewards() const { return rewards_; }

 private:
  std::size_t idx(int s, int a) const { return static_cast<std::size_t>(s * a_ + a); }

  int s_;
  int a_;
  double gamma_;
  std::vector<double> transitions_;
  std::vector<double> rewards_;
};

// 4x4 grid, state = 4 * row + col, actions 0 up, 1 down, 2 left, 3 right.
// Walls clamp. State 15 is the absorbing goal; entering it pays +1, every
// other reward is 0.
TabularMDP gridworld4x4(double gamma = 0.9);

struct PolicyValuePair {
  std::vector<int> policy;
  Eigen::VectorXd values;
};

inline constexpr double kTieTolerance = 1e-6;

// Q(s, a) = r(s, a) + gamma * sum_s' T(s'|s,a) V(s'), as an S x A matrix.
Eigen::MatrixXd q_values(const TabularMDP& mdp, const Eigen::VectorXd& v);
// Lowest action whose value is within `tie` of the row maximum.
std::vector<int> greedy_policy(const Eigen::MatrixXd& q, double tie = kTieTolerance);
// sup_s |max_a Q(s, a) - V(s)|
double bellman_residual_sup(const TabularMDP& mdp, const Eigen::VectorXd& v);

// Iterates V <- max_a Q until the sup-norm Bellman residual is <= tol and
// returns that V with its greedy policy. `on_iterate` sees V_0, V_1, ...
PolicyValuePair value_iteration(const TabularMDP& mdp, double tol,
                                const std::function<void(const Eigen::VectorXd&)>& on_iterate = {},
                                double tie = kTieTolerance);

// Solves (I - gamma P_pi) V = r_pi.
Eigen::VectorXd policy_evaluation_exact(const TabularMDP& mdp, const std::vector<int>& policy);
// Stochastic policy: probs(s, a) = pi(a | s).
Eigen::VectorXd policy_evaluation_exact(const TabularMDP& mdp, const Eigen::MatrixXd& probs);

struct Transition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  double weight = 0.0;
  std::size_t count = 0;  // draws behind this tuple (0 in exact mode)
};

struct TransitionDataset {
  int n_states = 0;
  int n_actions = 0;
  bool exact = false;
  std::vector<Transition> tuples;  // sorted by (s, a, s'), weights sum to 1
};

// d(s, a) = 1 / (S A).
Eigen::MatrixXd uniform_exploration(const TabularMDP& mdp);

// Tuples (s, a, r, s') under state-action distribution d (S x A, sums to 1).
// Exact mode (n unset) emits weight d(s,a) T(s'|s,a) for every reachable s'
// and requires d > 0 everywhere; sampled mode draws n tuples and aggregates
// repeats.
TransitionDataset make_transition_dataset(const TabularMDP& mdp, const Eigen::MatrixXd& d,
                                          std::optional<std::size_t> n, std::uint64_t seed);
// Deterministic behavior: s uniform, a = policy(s).
TransitionDataset make_transition_dataset(const TabularMDP& mdp, const std::vector<int>& policy,
                                          std::optional<std::size_t> n, std::uint64_t seed);

// What the multiplier conditions on. A policy is evaluated by restricting the
// data to its actions and conditioning on z = (s, a), z_key = s * A + a; the
// behavior policy itself is evaluated by conditioning on z = s.
enum class Conditioning { kStateAction, kState };

struct BellmanOptions {
  // Drop gamma on V(s') in the residual, as in one displayed form of the game.
  bool literal_display = false;
  GameOptions game;
};

// (x, y, z) view of the data: x = {s}, y = r, z = {s, a} or {s}. Weights are
// renormalized after restriction to `policy`.
Dataset transition_view(const TransitionDataset& ds, const std::vector<int>* policy,
                        Conditioning cond);

// Game with residual r + gamma V(s') - V(s): psi = phi_v(s) - gamma phi_v(s').
ReLaGame bellman_game(const TransitionDataset& ds, const std::vector<int>* policy, double gamma,
                      const FunctionClass& v_class, const FunctionClass& f_class,
                      const BellmanOptions& opts = {});

struct PolicyEvaluation {
  Eigen::VectorXd values;  // V at every state, from the best iterate
  ParamFunction v;
  GameTrace trace;
};

// Evaluates `policy` (or, when null, the behavior policy of the data).
PolicyEvaluation evaluate_policy_via_game(const TransitionDataset& ds,
                                          const std::vector<int>* policy, double gamma,
                                          const FeatureMap& v_class, const FeatureMap& f_class,
                                          const SolverConfig& cfg, const BellmanOptions& opts = {});

// Q(s, a) = E[r + gamma V(s') | s, a] under the dataset.
Eigen::MatrixXd dataset_q_values(const TransitionDataset& ds, const Eigen::VectorXd& v,
                                 double gamma);

struct ImprovementRound {
  std::vector<int> policy;   // policy evaluated this round
  Eigen::VectorXd values;    // its game value
};

struct ImprovementResult {
  PolicyValuePair final;
  std::vector<ImprovementRound> history;
  bool converged = false;  // the greedy step reproduced the evaluated policy
};

// Alternates game evaluation and greedy extraction from dataset Q. The data
// must cover every (s, a); f_class conditions on (s, a).
ImprovementResult greedy_improvement_loop(const TransitionDataset& ds, double gamma,
                                          const FeatureMap& v_class, const FeatureMap& f_class,
                                          const SolverConfig& cfg, int rounds,
                                          std::vector<int> initial_policy = {},
                                          const BellmanOptions& opts = {});

}  // namespace cmm
