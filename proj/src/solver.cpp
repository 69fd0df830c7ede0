#include "cmm/solver.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "cmm/csv.hpp"
#include "cmm/error.hpp"
#include "cmm/rng.hpp"
#include "cmm/simd/kernels.hpp"

namespace cmm {

namespace {

constexpr double kDivergenceLimit = 1e12;

bool positive_finite(double v) { return v > 0.0 && std::isfinite(v); }

}  // namespace

void SolverConfig::validate() const {
  if (!positive_finite(epsilon)) throw ValidationError("solver.epsilon must be positive");
  if (max_iters < 1) throw ValidationError("solver.max_iters must be >= 1");
  if (const auto* o = std::get_if<OgdUpdate>(&h_update)) {
    if (o->c && !positive_finite(*o->c)) throw ValidationError("solver.h_update.c must be positive");
  } else {
    const auto& f = std::get<FtrlUpdate>(h_update);
    if (f.strength && !positive_finite(*f.strength)) {
      throw ValidationError("solver.h_update.strength must be positive");
    }
  }
  if (const auto* g = std::get_if<GradientF>(&f_update)) {
    if (g->steps_per_iter < 1) throw ValidationError("solver.f_update.steps_per_iter must be >= 1");
  }
  if (minibatch && *minibatch < 1) throw ValidationError("solver.minibatch must be >= 1");
  if (!(grad_tolerance >= 0.0) || !std::isfinite(grad_tolerance)) {
    throw ValidationError("solver.grad_tolerance must be nonnegative");
  }
}

std::string_view stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::kThreshold: return "threshold";
    case StopReason::kMaxIters: return "max_iters";
    case StopReason::kStationary: return "stationary";
  }
  return "?";
}

ParamFunction ogd_step(const ParamFunction& h, const Eigen::VectorXd& grad, std::size_t t,
                       double c, StepSchedule schedule) {
  if (t < 1) throw ValidationError("ogd_step: t must be >= 1");
  if (grad.size() != h.weights.size()) throw ValidationError("ogd_step: gradient length mismatch");
  const double eta =
      schedule == StepSchedule::kInverseSqrt ? c / std::sqrt(static_cast<double>(t)) : c;
  ParamFunction out = h;
  out.weights = h.weights - eta * grad;
  return project(std::move(out));
}

ParamFunction ftrl_step(const ParamFunction& like, const Eigen::VectorXd& grad_sum,
                        double strength) {
  if (!positive_finite(strength)) throw ValidationError("ftrl_step: strength must be positive");
  if (grad_sum.size() != like.weights.size()) {
    throw ValidationError("ftrl_step: gradient length mismatch");
  }
  ParamFunction out = like;
  out.weights = -grad_sum / strength;
  return project(std::move(out));
}

double kappa_of_N(int z_cardinality, std::size_t n) {
  if (z_cardinality < 1) throw ValidationError("kappa_of_N: |Z| must be >= 1");
  if (n < 1) throw ValidationError("kappa_of_N: N must be >= 1");
  return static_cast<double>(z_cardinality) / static_cast<double>(n);
}

GameTrace run_no_regret_game(const ReLaGame& game, const SolverConfig& cfg) {
  cfg.validate();
  const FunctionClass& hc = game.h_class();
  const FunctionClass& fc = game.f_class();

  ParamFunction h = hc.zero();
  Eigen::VectorXd grad_sum = Eigen::VectorXd::Zero(h.weights.size());

  const bool ogd = std::holds_alternative<OgdUpdate>(cfg.h_update);
  double scale = 0.0;
  StepSchedule schedule = StepSchedule::kInverseSqrt;
  if (ogd) {
    const auto& o = std::get<OgdUpdate>(cfg.h_update);
    schedule = o.schedule;
    if (o.c) {
      scale = *o.c;
    } else {
      const double curv = game.h_curvature();
      scale = curv > 0.0 ? 1.0 / curv : 1.0;
    }
  } else {
    const auto& f = std::get<FtrlUpdate>(cfg.h_update);
    if (f.strength) {
      scale = *f.strength;
    } else {
      const double curv = game.h_curvature();
      scale = curv > 0.0 ? curv : 1.0;
    }
  }

  const GradientF* fgrad = std::get_if<GradientF>(&cfg.f_update);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fc.features.output_dim()));
  const double f_step = fgrad ? 1.0 / std::max(game.f_curvature(), 1e-300) : 0.0;
  const auto& mom = game.moments();

  RngHandle rng(cfg.seed);
  std::vector<double> cumulative;
  if (cfg.minibatch) {
    const auto wts = game.data().weights();
    cumulative.resize(wts.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < wts.size(); ++i) cumulative[i] = acc += wts[i];
  }

  GameTrace trace;
  trace.step_scale = scale;
  trace.best_payoff = std::numeric_limits<double>::infinity();
  double first_grad = 0.0;

  for (std::size_t t = 1; t <= cfg.max_iters; ++t) {
    if (fgrad) {
      for (int k = 0; k < fgrad->steps_per_iter; ++k) {
        const Eigen::VectorXd rbar = mom.cross_fy - mom.cross_fh * h.weights;
        w += f_step * (rbar - mom.gram_f * w - game.f_ridge() * w);
      }
    } else {
      w = game.best_response_weights(h.weights);
    }
    const double value = game.payoff_moments(h.weights, w);
    if (!std::isfinite(value) || value > kDivergenceLimit) {
      throw DivergenceError("divergence: reduce step size");
    }

    Eigen::VectorXd g;
    if (cfg.minibatch) {
      const ParamFunction f = fc.with_weights(w);
      g = Eigen::VectorXd::Zero(h.weights.size());
      for (std::size_t b = 0; b < *cfg.minibatch; ++b) {
        g += grad_h_sample(game, h, f, rng.from_cumulative(cumulative));
      }
      g /= static_cast<double>(*cfg.minibatch);
    } else {
      g = game.grad_h_moments(h.weights, w);
    }
    const double gnorm = g.norm();
    trace.records.push_back({t, value, gnorm});
    if (value < trace.best_payoff) {
      trace.best_payoff = value;
      trace.best_t = t;
      trace.best_h = h;
    }
    if (cfg.checkpoint_every > 0 && (t == 1 || t % cfg.checkpoint_every == 0)) {
      trace.checkpoints.emplace_back(t, h.weights);
    }
    trace.last_h = h;
    trace.last_f = fc.with_weights(w);
    if (t == 1) first_grad = gnorm;

    if (value <= cfg.epsilon) {
      trace.stopped_reason = StopReason::kThreshold;
      return trace;
    }
    if (cfg.grad_tolerance > 0.0 && gnorm <= cfg.grad_tolerance * first_grad) {
      trace.stopped_reason = StopReason::kStationary;
      return trace;
    }
    if (t == cfg.max_iters) break;

    if (ogd) {
      h = ogd_step(h, g, t, scale, schedule);
    } else {
      grad_sum += g;
      h = ftrl_step(h, grad_sum, scale);
    }
  }
  trace.stopped_reason = StopReason::kMaxIters;
  return trace;
}

void IvanovConfig::validate() const {
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw ValidationError("ivanov.kappa must be >= 0");
  if (!positive_finite(penalty_init)) throw ValidationError("ivanov.penalty_init must be positive");
  if (!(penalty_growth > 1.0) || !std::isfinite(penalty_growth)) {
    throw ValidationError("ivanov.penalty_growth must be > 1");
  }
  if (outer_iters < 1) throw ValidationError("ivanov.outer_iters must be >= 1");
  if (!positive_finite(tolerance)) throw ValidationError("ivanov.tolerance must be positive");
}

double conditional_slack(const ReLaGame& game, const ParamFunction& h) {
  const auto r = game.residuals(h);
  const auto means = conditional_means(game.data(), r);
  const auto groups = group_by_z(game.data());
  std::vector<double> terms(groups.size());
  for (std::size_t z = 0; z < groups.size(); ++z) terms[z] = groups[z].mass * means[z] * means[z];
  return simd::sum(terms);
}

IvanovResult solve_ivanov(const ReLaGame& game, const IvanovConfig& icfg,
                          const SolverConfig& cfg) {
  icfg.validate();
  cfg.validate();
  if (!game.data().discrete_z()) throw ValidationError("dataset not discrete in z");

  double best = std::numeric_limits<double>::infinity();
  std::vector<double> history;
  double penalty = icfg.penalty_init;
  for (std::size_t k = 0; k < icfg.outer_iters; ++k) {
    const ReLaGame inner = game.penalized(penalty);
    GameTrace trace = run_no_regret_game(inner, cfg);
    const double slack = conditional_slack(game, trace.best_h);
    history.push_back(slack);
    best = std::min(best, slack);
    if (slack <= icfg.kappa + icfg.tolerance) {
      IvanovResult out;
      out.h = trace.best_h;
      out.trace = std::move(trace);
      out.achieved_slack = slack;
      out.penalty = penalty;
      out.outer_iterations = k + 1;
      out.slack_history = std::move(history);
      return out;
    }
    penalty *= icfg.penalty_growth;
  }
  throw InfeasibleError("ivanov constraint infeasible: best slack " + format_double(best) +
                            " > kappa " + format_double(icfg.kappa),
                        best);
}

RegretReport regret_diagnostic(const GameTrace& trace) {
  const auto& rec = trace.records;
  if (rec.size() < 10) throw ValidationError("trace too short");
  RegretReport out;
  out.running_average.resize(rec.size());
  // Compensated running sum so the averages stay monotone-accurate.
  double s = 0.0, c = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const double v = rec[i].payoff;
    const double t = s + v;
    c += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
    s = t;
    out.running_average[i] = (s + c) / static_cast<double>(i + 1);
  }
  for (std::size_t i = 10; i + 1 < rec.size(); ++i) {
    if (out.running_average[i + 1] > out.running_average[i] + 1e-6) {
      out.monotone_after_burn_in = false;
    }
  }

  const double terminal = rec.back().payoff;
  const std::size_t T = rec.size();
  std::vector<double> lx, ly;
  std::size_t last = 0;
  for (double u = std::log(10.0); ; u += std::log(10.0) / 20.0) {
    auto t = static_cast<std::size_t>(std::llround(std::exp(u)));
    if (t > T) t = T;
    if (t > last) {
      const double d = out.running_average[t - 1] - terminal;
      if (d > 0.0 && std::isfinite(d)) {
        lx.push_back(std::log(static_cast<double>(t)));
        ly.push_back(std::log(d));
      }
      last = t;
    }
    if (t >= T) break;
  }
  if (lx.size() < 2) {
    out.degenerate = true;
    out.slope = 0.0;
    return out;
  }
  const auto n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) {
    out.degenerate = true;
    return out;
  }
  out.slope = sxy / sxx;
  return out;
}

void write_trace_csv(std::ostream& out, const GameTrace& trace) {
  out << "t,payoff,grad_norm\n";
  for (const auto& r : trace.records) {
    out << r.t << ',' << format_double(r.payoff) << ',' << format_double(r.grad_norm) << '\n';
  }
}

std::vector<TraceRecord> read_trace_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  const auto ct = t.column("t");
  const auto cp = t.column("payoff");
  const auto cg = t.column("grad_norm");
  std::vector<TraceRecord> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    out.push_back({static_cast<std::size_t>(parse_int(row[ct], "trace csv")),
                   parse_double(row[cp], "trace csv"), parse_double(row[cg], "trace csv")});
  }
  return out;
}

}  // namespace cmm
