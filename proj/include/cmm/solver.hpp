#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "cmm/function_classes.hpp"
#include "cmm/rela_game.hpp"

namespace cmm {

enum class StepSchedule { kInverseSqrt, kConstant };

// eta_t = c / sqrt(t) (or c). Unset c: 1 / curvature of the h-loss.
struct OgdUpdate {
  std::optional<double> c;
  StepSchedule schedule = StepSchedule::kInverseSqrt;
};

// weights = project(-(1/strength) * sum of past gradients). Unset strength:
// curvature of the h-loss.
struct FtrlUpdate {
  std::optional<double> strength;
};

struct BestResponseF {};
// Gradient ascent on f instead of the exact best response; steps of size
// 1 / lambda_max(G_f + ridge) in the half-gradient.
struct GradientF {
  int steps_per_iter = 1;
};

struct SolverConfig {
  double epsilon = 1e-4;
  std::size_t max_iters = 100000;
  std::variant<OgdUpdate, FtrlUpdate> h_update = OgdUpdate{};
  std::variant<BestResponseF, GradientF> f_update = BestResponseF{};
  std::uint64_t seed = 0;
  // Single-draw-per-row minibatch for the h-gradient; full batch when unset.
  std::optional<std::size_t> minibatch;
  // Stop when |grad_h| <= grad_tolerance * |grad_h at t=1|; 0 disables.
  double grad_tolerance = 0.0;
  // Snapshot h-weights every k iterations; 0 disables.
  std::size_t checkpoint_every = 0;

  void validate() const;
};

enum class StopReason { kThreshold, kMaxIters, kStationary };
std::string_view stop_reason_name(StopReason r);

struct TraceRecord {
  std::size_t t = 0;
  double payoff = 0.0;
  double grad_norm = 0.0;
};

struct GameTrace {
  std::vector<TraceRecord> records;
  std::vector<std::pair<std::size_t, Eigen::VectorXd>> checkpoints;
  std::size_t best_t = 0;
  double best_payoff = 0.0;
  ParamFunction best_h;
  ParamFunction last_h;
  ParamFunction last_f;
  StopReason stopped_reason = StopReason::kMaxIters;
  double step_scale = 0.0;  // resolved c (OGD) or strength (FTRL)
};

GameTrace run_no_regret_game(const ReLaGame& game, const SolverConfig& cfg);

ParamFunction ogd_step(const ParamFunction& h, const Eigen::VectorXd& grad, std::size_t t,
                       double c, StepSchedule schedule = StepSchedule::kInverseSqrt);
// `like` supplies features and radius.
ParamFunction ftrl_step(const ParamFunction& like, const Eigen::VectorXd& grad_sum,
                        double strength);

double kappa_of_N(int z_cardinality, std::size_t n);

struct IvanovConfig {
  double kappa = 0.0;
  double penalty_init = 1.0;
  double penalty_growth = 10.0;
  std::size_t outer_iters = 8;
  double tolerance = 1e-3;

  void validate() const;
};

struct IvanovResult {
  ParamFunction h;
  GameTrace trace;
  double achieved_slack = 0.0;
  double penalty = 0.0;
  std::size_t outer_iterations = 0;
  std::vector<double> slack_history;
};

// Penalty loop for min alpha R(h) s.t. E_z[delta_z^2] <= kappa: round k plays
// the game with payoff penalty_k * L + alpha R, penalty_k = init * growth^k,
// and stops at the first round whose sum_z p(z) E[y - h | z]^2 fits the
// budget. Throws InfeasibleError carrying the best slack seen.
IvanovResult solve_ivanov(const ReLaGame& game, const IvanovConfig& icfg,
                          const SolverConfig& cfg);

// sum_z p(z) E[y - h | z]^2 over the game's residuals.
double conditional_slack(const ReLaGame& game, const ParamFunction& h);

struct RegretReport {
  std::vector<double> running_average;
  double slope = 0.0;
  bool degenerate = false;
  // A_{t+1} <= A_t + 1e-6 for every t past the burn-in of 10.
  bool monotone_after_burn_in = true;
};

RegretReport regret_diagnostic(const GameTrace& trace);

void write_trace_csv(std::ostream& out, const GameTrace& trace);
std::vector<TraceRecord> read_trace_csv(std::istream& in);

}  // namespace cmm
