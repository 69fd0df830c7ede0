// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "cmm/bellman.hpp"
#include "cmm/error.hpp"
#include "cmm/harness.hpp"
#include "cmm/ivr.hpp"
#include "cmm/rela_game.hpp"
#include "cmm/solver.hpp"
#include "test_support.hpp"

using namespace cmm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// 1. Payoff at the best response equals the conditional MSE.
Outcome kkt_identity() {
  RngHandle rng(1001);
  GameOptions exact;
  exact.f_ridge = 0.0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = static_cast<int>(1 + rng.uniform_index(8));
    const Dataset d = test::random_discrete_dataset(
        rng, {k, static_cast<std::size_t>(k) + 10 + rng.uniform_index(200), trial % 2 == 0});
    const FunctionClass hc{test::random_x_features(rng)};
    const ReLaGame g(d, hc, FunctionClass{FeatureMap::tabular(k)}, exact);
    const ParamFunction h =
        hc.with_weights(test::random_vector(rng, static_cast<Eigen::Index>(hc.features.output_dim())));
    const double lhs = payoff(g, h, best_response_f(g, h));
    worst = std::max(worst, std::fabs(lhs - test::naive_conditional_mse(d, h)));
  }
  return {worst <= 1e-10, fmt("max |L(h, f*) - cmse| = %.3g over 100 instances", worst)};
}

// 2. Best response zeroes grad_f and equals the per-z residual means.
Outcome stationarity() {
  RngHandle rng(1002);
  GameOptions exact;
  exact.f_ridge = 0.0;
  double worst_grad = 0.0, worst_mean = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = static_cast<int>(1 + rng.uniform_index(8));
    const Dataset d = test::random_discrete_dataset(
        rng, {k, static_cast<std::size_t>(k) + 10 + rng.uniform_index(200), trial % 2 == 1});
    const FunctionClass hc{test::random_x_features(rng)};
    const ReLaGame g(d, hc, FunctionClass{FeatureMap::tabular(k)}, exact);
    const ParamFunction h =
        hc.with_weights(test::random_vector(rng, static_cast<Eigen::Index>(hc.features.output_dim())));
    const ParamFunction f = best_response_f(g, h);
    worst_grad = std::max(worst_grad, grad_f(g, h, f).cwiseAbs().maxCoeff());
    const auto groups = test::naive_groups(d, h);
    for (const auto& [z, m] : groups.mean) {
      worst_mean = std::max(worst_mean, std::fabs(f.weights[z] - static_cast<double>(m)));
    }
  }
  return {worst_grad <= 1e-10 && worst_mean <= 1e-10,
          fmt("max |grad_f| = %.3g, max |f(z) - residual mean| = %.3g", worst_grad, worst_mean)};
}

// 3. Game slope matches 2SLS and beats OLS under confounding.
Outcome tsls_equivalence() {
  int agree = 0, better = 0;
  double worst = 0.0;
  SolverConfig cfg;
  cfg.h_update = FtrlUpdate{};
  cfg.epsilon = 1e-14;
  cfg.grad_tolerance = 1e-10;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    LinearIVScenario sc;
    sc.seed = seed;
    const Dataset d = generate_linear_iv(sc);
    const ReLaGame g(d, FunctionClass{FeatureMap::polynomial(1)}, FunctionClass{FeatureMap::polynomial(1)});
    const double bg = run_no_regret_game(g, cfg).best_h.weights[1];
    const double gap = std::fabs(bg - tsls_estimate(d));
    worst = std::max(worst, gap);
    agree += gap <= 1e-2;
    better += std::fabs(bg - 2.0) < std::fabs(ols_slope_fit(d).beta - 2.0);
  }
  return {agree == 20 && better >= 19,
          fmt("2SLS agreement %.0f/20 (max gap %.3g), closer than OLS on %.0f/20", agree, worst, better)};
}

// 4. Single-sample two-stage gradient is biased by the conditional covariance;
// the single-sample ReLa gradient is not.
Outcome bias_demo() {
  const ExperimentConfig c = default_config(ExperimentKind::kBiasDemo);
  NonlinearIVScenario sc = c.nonlinear;
  sc.seed = 1;
  const Dataset data = generate_nonlinear_iv(sc);
  ParamFunction h = ParamFunction::zero(FeatureMap::polynomial(2));
  h.weights = Eigen::Vector3d(sc.h_star.qc, sc.h_star.qb, sc.h_star.qa);
  const BiasReport r = gradient_bias_experiment(data, h, 10000, 77);
  bool matches = true, unbiased = true;
  double max_z = 0.0;
  for (Eigen::Index k = 0; k < r.predicted_bias.size(); ++k) {
    const double se = r.single_two_stage.stderr_mean[k];
    const double observed = r.single_two_stage.mean[k] - r.exact_two_stage[k];
    matches &= std::fabs(observed - r.predicted_bias[k]) <= 3 * se;
    max_z = std::max(max_z, std::fabs(r.predicted_bias[k]) / se);
    unbiased &= std::fabs(r.single_rela.mean[k] - r.exact_rela[k]) <= 3 * r.single_rela.stderr_mean[k];
  }
  return {matches && unbiased && max_z > 5.0,
          fmt("observed bias within 3 se of predicted: %.0f, |bias|/se = %.1f, ReLa unbiased at 3 se: %.0f",
              matches, max_z, unbiased)};
}

// 5. Gridworld policy evaluation and improvement against the exact oracles.
Outcome bellman() {
  const TabularMDP g = gridworld4x4();
  const auto ds = make_transition_dataset(g, uniform_exploration(g), std::nullopt, 0);
  SolverConfig cfg;
  cfg.h_update = FtrlUpdate{};
  cfg.epsilon = 1e-20;
  cfg.grad_tolerance = 1e-12;
  const auto ev = evaluate_policy_via_game(ds, nullptr, 0.9, FeatureMap::tabular(16),
                                           FeatureMap::tabular(16), cfg);
  const double sup = (ev.values - policy_evaluation_exact(g, Eigen::MatrixXd::Constant(16, 4, 0.25)))
                         .cwiseAbs()
                         .maxCoeff();
  const auto res = greedy_improvement_loop(ds, 0.9, FeatureMap::tabular(16), FeatureMap::tabular(64),
                                           cfg, 10, std::vector<int>(16, 0));
  const auto opt = value_iteration(g, 1e-12);
  int match = 0;
  for (int s = 0; s < 16; ++s) match += res.final.policy[static_cast<std::size_t>(s)] == opt.policy[static_cast<std::size_t>(s)];
  return {sup <= 1e-2 && match == 16 && res.history.size() <= 10,
          fmt("sup error %.3g, optimal actions %.0f/16 after %.0f rounds", sup, match,
              static_cast<double>(res.history.size()))};
}

// 6. OGD reaches eps = 1e-4 on realizable instances with decaying regret.
Dataset realizable(std::uint64_t seed, int k, std::size_t n) {
  RngHandle rng(seed);
  std::vector<SampleTriple> rows;
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const int key = static_cast<int>(i % static_cast<std::size_t>(k));
    const double x = 0.4 * key - 0.8 + 0.5 * rng.normal();
    rows.push_back({{x}, 0.0, {static_cast<double>(key)}, key});
    members[static_cast<std::size_t>(key)].push_back(i);
  }
  for (const auto& m : members) {
    std::vector<double> e(m.size());
    double mean = 0.0;
    for (auto& v : e) mean += v = rng.normal();
    mean /= static_cast<double>(e.size());
    for (std::size_t j = 0; j < m.size(); ++j) rows[m[j]].y = 1.0 + 2.0 * rows[m[j]].x[0] + (e[j] - mean);
  }
  return Dataset(rows, k);
}

Outcome convergence() {
  int ok = 0;
  double worst_payoff = 0.0, worst_slope = -1e300;
  std::size_t max_t = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ReLaGame g(realizable(seed, 5, 400), FunctionClass{FeatureMap::polynomial(1)},
                     FunctionClass{FeatureMap::tabular(5)});
    SolverConfig cfg;
    cfg.epsilon = 1e-4;
    cfg.max_iters = 100000;
    cfg.h_update = OgdUpdate{};
    const GameTrace tr = run_no_regret_game(g, cfg);
    const RegretReport rr = regret_diagnostic(tr);
    worst_payoff = std::max(worst_payoff, tr.best_payoff);
    worst_slope = std::max(worst_slope, rr.slope);
    max_t = std::max(max_t, tr.records.size());
    ok += tr.best_payoff <= 1e-4 && !rr.degenerate && rr.slope <= -0.4;
  }
  return {ok == 10, fmt("%.0f/10 seeds: worst best payoff %.3g, worst slope %.3g", ok, worst_payoff,
                        worst_slope) +
                        fmt(", max iterations %.0f", static_cast<double>(max_t))};
}

// 7. Ivanov budget kappa = |Z| / N on the discrete linear scenario.
Outcome ivanov() {
  const ExperimentConfig c = default_config(ExperimentKind::kIvanov);
  NonlinearIVScenario sc = c.nonlinear;
  sc.seed = 1;
  const Dataset d = generate_nonlinear_iv(sc);
  const ReLaGame g(d, FunctionClass{c.model.h_features}, FunctionClass{FeatureMap::tabular(10)}, c.model.game);
  IvanovConfig icfg = c.ivanov;
  icfg.kappa = kappa_of_N(10, d.size());
  SolverConfig scfg = c.solver;
  scfg.seed = 1;
  try {
    const IvanovResult r = solve_ivanov(g, icfg, scfg);
    const double independent = test::naive_conditional_mse(d, r.h);
    return {icfg.kappa == 0.01 && independent <= icfg.kappa + 1e-3,
            fmt("kappa %.3g, achieved slack %.4g (recomputed %.4g)", icfg.kappa, r.achieved_slack,
                independent)};
  } catch (const InfeasibleError& e) {
    return {false, std::string("infeasible: ") + e.what()};
  }
}

// 8. Analytic gradients against central differences.
Outcome gradients() {
  RngHandle rng(1008);
  double worst_h = 0.0, worst_f = 0.0, worst_r = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int k = static_cast<int>(1 + rng.uniform_index(6));
    const Dataset d = test::random_discrete_dataset(
        rng, {k, static_cast<std::size_t>(k) + 5 + rng.uniform_index(60), rng.uniform() < 0.5});
    const FunctionClass hc{test::random_x_features(rng)};
    const FunctionClass fc{trial % 2 ? FeatureMap::tabular(k) : FeatureMap::polynomial(1)};
    GameOptions o;
    if (trial % 3 == 0) {
      o.alpha = 0.7;
      o.h_regularizer = HRegularizer::kOlsAnchor;
    }
    const ReLaGame g(d, hc, fc, o);
    const ParamFunction h =
        hc.with_weights(test::random_vector(rng, static_cast<Eigen::Index>(hc.features.output_dim())));
    const ParamFunction f =
        fc.with_weights(test::random_vector(rng, static_cast<Eigen::Index>(fc.features.output_dim())));
    const auto fd_h = test::central_diff(
        [&](const Eigen::VectorXd& w) { return payoff(g, hc.with_weights(w), f); }, h.weights);
    const auto fd_f = test::central_diff(
        [&](const Eigen::VectorXd& w) { return payoff(g, h, fc.with_weights(w)); }, f.weights);
    const auto fd_r = test::central_diff(
        [&](const Eigen::VectorXd& w) { return ols_anchor_R(d, hc.with_weights(w)).value; }, h.weights);
    worst_h = std::max(worst_h, test::rel_inf_error(fd_h, grad_h(g, h, f), 1e-3));
    worst_f = std::max(worst_f, test::rel_inf_error(fd_f, grad_f(g, h, f), 1e-3));
    worst_r = std::max(worst_r, test::rel_inf_error(fd_r, ols_anchor_R(d, h).grad, 1e-3));
  }
  return {worst_h <= 1e-6 && worst_f <= 1e-6 && worst_r <= 1e-6,
          fmt("max relative error: grad_h %.3g, grad_f %.3g, R %.3g", worst_h, worst_f, worst_r)};
}

// 9. Every experiment kind, run twice, yields byte-identical results.csv.
Outcome determinism() {
  const fs::path root = fs::path(CMM_ACCEPTANCE_TMP);
  int same = 0;
  std::string first_bad;
  for (auto k : all_experiments()) {
    ExperimentConfig c = default_config(k);
    if (k == ExperimentKind::kBiasDemo) c.trials = 2000;
    if (k == ExperimentKind::kBellmanEval) c.bellman.n = 20000;
    std::string text[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = root / (std::string(experiment_name(k)) + "_" + std::to_string(rep));
      fs::remove_all(out);
      RunOptions o;
      o.out = out.string();
      o.quiet = true;
      std::ostringstream log;
      run_experiment(c, o, log);
      std::ifstream in(out / "results.csv", std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      text[rep] = ss.str();
    }
    if (text[0] == text[1] && text[0].size() > 20) {
      ++same;
    } else if (first_bad.empty()) {
      first_bad = std::string(experiment_name(k));
    }
  }
  return {same == 6, fmt("%.0f/6 experiment kinds byte-identical", same) +
                         (first_bad.empty() ? "" : " (first mismatch: " + first_bad + ")")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "payoff at best response equals conditional MSE", 10, kkt_identity},
      {2, "best response is stationary and equals residual means", 5, stationarity},
      {3, "game slope matches 2SLS and beats OLS", 120, tsls_equivalence},
      {4, "single-sample two-stage bias vs unbiased ReLa gradient", 60, bias_demo},
      {5, "Bellman evaluation and improvement match oracles", 60, bellman},
      {6, "no-regret dynamics reach eps on realizable instances", 120, convergence},
      {7, "Ivanov budget kappa = |Z|/N is met", 60, ivanov},
      {8, "gradients match central differences", 10, gradients},
      {9, "results.csv is deterministic", 600, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s criterion %d: %s -- %s; %.2f s (budget %.0f s)\n", pass ? "PASS" : "FAIL", c.id,
                c.name, o.detail.c_str(), secs, c.budget_seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
