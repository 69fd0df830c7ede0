#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cmm/error.hpp"
#include "cmm/solver.hpp"
#include "test_support.hpp"

using namespace cmm;

namespace {

// y = 1 + 2x + e with e centred inside each z group, so h*(x) = 1 + 2x has
// zero conditional residuals: a realizable instance for a linear class.
Dataset realizable(std::uint64_t seed, int k = 5, std::size_t n = 400) {
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
    for (std::size_t j = 0; j < m.size(); ++j) {
      auto& r = rows[m[j]];
      r.y = 1.0 + 2.0 * r.x[0] + (e[j] - mean);
    }
  }
  return Dataset(rows, k);
}

ReLaGame realizable_game(std::uint64_t seed, int k = 5) {
  return ReLaGame(realizable(seed, k), FunctionClass{FeatureMap::polynomial(1)},
                  FunctionClass{FeatureMap::tabular(k)});
}

SolverConfig ogd_config(double eps = 1e-4) {
  SolverConfig c;
  c.epsilon = eps;
  c.h_update = OgdUpdate{};
  return c;
}

ParamFunction poly_fn(std::vector<double> w, double radius = kDefaultRadius) {
  ParamFunction f = ParamFunction::zero(FeatureMap::polynomial(static_cast<int>(w.size()) - 1), radius);
  f.weights = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  return f;
}

}  // namespace

TEST_CASE("ogd_step worked examples") {
  const Eigen::VectorXd two = Eigen::VectorXd::Constant(1, 2.0);
  CHECK(ogd_step(poly_fn({0.0}), two, 1, 1.0).weights[0] == -2.0);
  CHECK(ogd_step(poly_fn({0.0}), two, 4, 1.0).weights[0] == -1.0);
  CHECK(ogd_step(poly_fn({0.0}), two, 4, 1.0, StepSchedule::kConstant).weights[0] == -2.0);
  CHECK(ogd_step(poly_fn({0.7, -0.2}), Eigen::Vector2d::Zero(), 3, 5.0).weights ==
        Eigen::Vector2d(0.7, -0.2));
  CHECK(ogd_step(poly_fn({0.0}, 0.5), two, 1, 1.0).weights[0] == -0.5);
  CHECK_THROWS_AS(ogd_step(poly_fn({0.0}), two, 0, 1.0), ValidationError);
}

TEST_CASE("ftrl_step worked examples") {
  const ParamFunction like = poly_fn({0.0, 0.0});
  CHECK(ftrl_step(like, Eigen::Vector2d::Zero(), 2.0).weights.isZero());
  CHECK(ftrl_step(like, Eigen::Vector2d(1.0, -4.0), 2.0).weights == Eigen::Vector2d(-0.5, 2.0));
  CHECK(ftrl_step(like, Eigen::Vector2d(2.0, -8.0), 2.0).weights ==
        2.0 * ftrl_step(like, Eigen::Vector2d(1.0, -4.0), 2.0).weights);
  CHECK(ftrl_step(poly_fn({0.0, 0.0}, 1.0), Eigen::Vector2d(30.0, 40.0), 1.0).weights.isApprox(
      Eigen::Vector2d(-0.6, -0.8)));
  CHECK_THROWS_AS(ftrl_step(like, Eigen::Vector2d::Zero(), 0.0), ValidationError);
}

TEST_CASE("kappa_of_N worked examples") {
  CHECK(kappa_of_N(10, 1000) == 0.01);
  CHECK(kappa_of_N(7, 7) == 1.0);
  CHECK(kappa_of_N(1, 4) == 0.25);
  CHECK_THROWS_AS(kappa_of_N(0, 4), ValidationError);
}

TEST_CASE("solver config validation") {
  SolverConfig c;
  c.epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SolverConfig{};
  c.max_iters = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SolverConfig{};
  c.h_update = OgdUpdate{-1.0};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SolverConfig{};
  c.h_update = FtrlUpdate{0.0};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  IvanovConfig i;
  i.penalty_growth = 1.0;
  CHECK_THROWS_AS(i.validate(), ValidationError);
  i = IvanovConfig{};
  i.kappa = -1.0;
  CHECK_THROWS_AS(i.validate(), ValidationError);
}

TEST_CASE("property: FTRL with strength lambda equals constant-step OGD with 1/lambda") {
  RngHandle rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.uniform_index(4));
    const double lambda = test::uniform_in(rng, 0.5, 20.0);
    ParamFunction h = ParamFunction::zero(FeatureMap::polynomial(static_cast<int>(d) - 1));
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
    for (int t = 1; t <= 50; ++t) {
      const Eigen::VectorXd g = test::random_vector(rng, d);
      sum += g;
      h = ogd_step(h, g, static_cast<std::size_t>(t), 1.0 / lambda, StepSchedule::kConstant);
      const ParamFunction lazy = ftrl_step(h, sum, lambda);
      CHECK((lazy.weights - h.weights).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("realizable instances reach the threshold") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ReLaGame g = realizable_game(seed);
    for (bool use_ftrl : {false, true}) {
      SolverConfig cfg = ogd_config();
      if (use_ftrl) cfg.h_update = FtrlUpdate{};
      const GameTrace tr = run_no_regret_game(g, cfg);
      CHECK(tr.stopped_reason == StopReason::kThreshold);
      CHECK(tr.best_payoff <= 1e-4);
      // payoff <= eps bounds each group: p_z m_z^2 <= eps.
      const auto means = conditional_residual_means(g.data(), tr.best_h);
      const auto groups = group_by_z(g.data());
      for (std::size_t z = 0; z < means.size(); ++z) {
        CHECK(std::fabs(means[z]) <= std::sqrt(1e-4 / groups[z].mass) * (1 + 1e-9));
      }
      // Threshold value agrees with the direct conditional MSE.
      CHECK(test::naive_conditional_mse(g.data(), tr.best_h) <= 1e-4 * (1 + 1e-6));
    }
  }
}

TEST_CASE("single-group realizable instance: residual mean within 1e-2 at eps = 1e-4") {
  const ReLaGame g = realizable_game(2, 1);
  const GameTrace tr = run_no_regret_game(g, ogd_config());
  CHECK(tr.best_payoff <= 1e-4);
  CHECK(std::fabs(conditional_residual_means(g.data(), tr.best_h)[0]) <= 1e-2);
}

TEST_CASE("a loose threshold stops at t = 1 with the initial h") {
  const ReLaGame g = realizable_game(3);
  const GameTrace tr = run_no_regret_game(g, ogd_config(1e6));
  CHECK(tr.records.size() == 1);
  CHECK(tr.best_t == 1);
  CHECK(tr.best_h.weights.isZero());
  CHECK(tr.stopped_reason == StopReason::kThreshold);
}

TEST_CASE("property: best iterate is no worse than the running average") {
  RngHandle rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = static_cast<int>(2 + rng.uniform_index(4));
    const Dataset d = test::random_discrete_dataset(rng, {k, 50 + rng.uniform_index(100)});
    const ReLaGame g(d, FunctionClass{FeatureMap::polynomial(1)}, FunctionClass{FeatureMap::tabular(k)});
    SolverConfig cfg = ogd_config(1e-9);
    cfg.max_iters = 200;
    if (trial % 2) cfg.h_update = FtrlUpdate{};
    const GameTrace tr = run_no_regret_game(g, cfg);
    long double avg = 0.0L;
    double mn = tr.records.front().payoff;
    for (const auto& r : tr.records) {
      avg += r.payoff;
      mn = std::min(mn, r.payoff);
    }
    avg /= static_cast<long double>(tr.records.size());
    CHECK(tr.best_payoff <= static_cast<double>(avg) + 1e-12);
    CHECK(tr.best_payoff == mn);
    CHECK(tr.records[tr.best_t - 1].payoff == tr.best_payoff);
    CHECK(tr.best_h.weights.norm() <= tr.best_h.radius);
  }
}

TEST_CASE("identical game, config and seed give bit-identical traces") {
  const ReLaGame g = realizable_game(9);
  SolverConfig cfg = ogd_config(1e-8);
  cfg.minibatch = 16;
  cfg.seed = 1234;
  cfg.max_iters = 300;
  cfg.checkpoint_every = 50;
  const GameTrace a = run_no_regret_game(g, cfg), b = run_no_regret_game(g, cfg);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].payoff == b.records[i].payoff);
    CHECK(a.records[i].grad_norm == b.records[i].grad_norm);
  }
  CHECK(a.best_h.weights == b.best_h.weights);
  REQUIRE(a.checkpoints.size() == b.checkpoints.size());
  CHECK(a.checkpoints.size() == 1 + a.records.size() / 50);
  cfg.seed = 1235;
  const GameTrace c = run_no_regret_game(g, cfg);
  CHECK(c.records.back().payoff != a.records.back().payoff);
}

TEST_CASE("gradient-ascent multiplier updates also converge") {
  const ReLaGame g = realizable_game(4);
  SolverConfig cfg = ogd_config(1e-4);
  cfg.f_update = GradientF{3};
  const GameTrace tr = run_no_regret_game(g, cfg);
  CHECK(tr.stopped_reason == StopReason::kThreshold);
  CHECK(test::naive_conditional_mse(g.data(), tr.best_h) <= 1e-3);
}

TEST_CASE("oversized steps trip the divergence guard") {
  const ReLaGame g = realizable_game(5);
  SolverConfig cfg = ogd_config(1e-12);
  cfg.h_update = OgdUpdate{1e4, StepSchedule::kConstant};
  CHECK_THROWS_WITH_AS(run_no_regret_game(g, cfg), "divergence: reduce step size", DivergenceError);
}

TEST_CASE("regret diagnostic") {
  GameTrace flat;
  for (std::size_t t = 1; t <= 50; ++t) flat.records.push_back({t, 0.25, 0.0});
  const RegretReport r = regret_diagnostic(flat);
  CHECK(r.degenerate);
  CHECK(r.slope == 0.0);
  CHECK(r.monotone_after_burn_in);

  GameTrace short_trace;
  short_trace.records.assign(5, {1, 1.0, 1.0});
  CHECK_THROWS_WITH_AS(regret_diagnostic(short_trace), "trace too short", ValidationError);

  // payoff 1/t: A_t - A_T decays like log(t)/t.
  GameTrace decay;
  for (std::size_t t = 1; t <= 10000; ++t) decay.records.push_back({t, 1.0 / t, 0.0});
  const RegretReport d = regret_diagnostic(decay);
  CHECK_FALSE(d.degenerate);
  CHECK(d.slope < -0.7);
  CHECK(d.slope > -1.0);
  CHECK(d.monotone_after_burn_in);

  GameTrace bump = decay;
  bump.records[500].payoff = 10.0;
  CHECK_FALSE(regret_diagnostic(bump).monotone_after_burn_in);
}

TEST_CASE("trace csv round trip") {
  const ReLaGame g = realizable_game(6);
  SolverConfig cfg = ogd_config(1e-12);
  cfg.max_iters = 40;
  const GameTrace tr = run_no_regret_game(g, cfg);
  std::stringstream ss;
  write_trace_csv(ss, tr);
  const auto back = read_trace_csv(ss);
  REQUIRE(back.size() == tr.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].t == tr.records[i].t);
    CHECK(back[i].payoff == tr.records[i].payoff);
    CHECK(back[i].grad_norm == tr.records[i].grad_norm);
  }
}

TEST_CASE("ivanov: an inactive budget returns after one round") {
  const ReLaGame g(realizable(7), FunctionClass{FeatureMap::polynomial(0)},
                   FunctionClass{FeatureMap::tabular(5)},
                   GameOptions{1.0, HRegularizer::kOlsAnchor, std::nullopt});
  IvanovConfig ic;
  ic.kappa = 1e6;
  SolverConfig cfg = ogd_config(1e-12);
  cfg.h_update = FtrlUpdate{};
  cfg.grad_tolerance = 1e-10;
  const IvanovResult r = solve_ivanov(g, ic, cfg);
  CHECK(r.outer_iterations == 1);
  CHECK(r.penalty == ic.penalty_init);
  CHECK(r.achieved_slack <= ic.kappa + ic.tolerance);
}

TEST_CASE("ivanov: zero budget on a realizable instance recovers h*") {
  const ReLaGame g(realizable(8), FunctionClass{FeatureMap::polynomial(1)},
                   FunctionClass{FeatureMap::tabular(5)},
                   GameOptions{1.0, HRegularizer::kOlsAnchor, std::nullopt});
  IvanovConfig ic;
  ic.kappa = 0.0;
  ic.tolerance = 1e-6;
  SolverConfig cfg = ogd_config(1e-14);
  cfg.h_update = FtrlUpdate{};
  cfg.grad_tolerance = 1e-12;
  const IvanovResult r = solve_ivanov(g, ic, cfg);
  CHECK(r.achieved_slack <= 1e-6);
  CHECK(r.achieved_slack == doctest::Approx(conditional_slack(g, r.h)));
  CHECK(r.h.weights[0] == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(r.h.weights[1] == doctest::Approx(2.0).epsilon(1e-2));
  CHECK(r.slack_history.size() == r.outer_iterations);
}

TEST_CASE("ivanov: an unreachable budget raises InfeasibleError with the best slack") {
  // A constant h cannot match group means that differ.
  const ReLaGame g(realizable(10), FunctionClass{FeatureMap::polynomial(0)},
                   FunctionClass{FeatureMap::tabular(5)},
                   GameOptions{1.0, HRegularizer::kOlsAnchor, std::nullopt});
  IvanovConfig ic;
  ic.kappa = 0.0;
  ic.outer_iters = 3;
  SolverConfig cfg = ogd_config(1e-14);
  cfg.h_update = FtrlUpdate{};
  cfg.grad_tolerance = 1e-10;
  try {
    solve_ivanov(g, ic, cfg);
    FAIL("expected InfeasibleError");
  } catch (const InfeasibleError& e) {
    CHECK(e.best_slack() > ic.tolerance);
  }
}

TEST_CASE("property: ivanov success never exceeds the budget") {
  RngHandle rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = static_cast<int>(2 + rng.uniform_index(5));
    const Dataset d = test::random_discrete_dataset(rng, {k, 100 + rng.uniform_index(200)});
    const ReLaGame g(d, FunctionClass{FeatureMap::polynomial(static_cast<int>(rng.uniform_index(3)))},
                     FunctionClass{FeatureMap::tabular(k)},
                     GameOptions{1.0, HRegularizer::kOlsAnchor, std::nullopt});
    IvanovConfig ic;
    ic.kappa = test::uniform_in(rng, 0.0, 0.3);
    SolverConfig cfg = ogd_config(1e-14);
    cfg.h_update = FtrlUpdate{};
    cfg.grad_tolerance = 1e-9;
    try {
      const IvanovResult r = solve_ivanov(g, ic, cfg);
      CHECK(r.achieved_slack <= ic.kappa + ic.tolerance);
      CHECK(std::fabs(r.achieved_slack - test::naive_conditional_mse(d, r.h)) <= 1e-10);
    } catch (const InfeasibleError& e) {
      CHECK(e.best_slack() > ic.kappa + ic.tolerance);
    }
  }
}
