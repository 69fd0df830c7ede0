#include "cmm/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "cmm/csv.hpp"
#include "cmm/error.hpp"
#include "cmm/rng.hpp"

namespace cmm {

namespace fs = std::filesystem;
using namespace json_field;

namespace {

const Json* find(const Json& j, const char* key) {
  return j.contains(key) ? &j.at(key) : nullptr;
}

void set_number(const Json& j, const char* key, const std::string& path, double& dst) {
  if (const Json* v = find(j, key)) dst = number(*v, path + "." + key);
}

void set_size(const Json& j, const char* key, const std::string& path, std::size_t& dst) {
  if (const Json* v = find(j, key)) {
    const long long n = integer(*v, path + "." + key);
    if (n < 0) throw ValidationError(path + "." + key + ": must be >= 0");
    dst = static_cast<std::size_t>(n);
  }
}

std::optional<int> optional_int(const Json& v, const std::string& path) {
  if (v.is_null()) return std::nullopt;
  return static_cast<int>(integer(v, path));
}

Json optional_json(const std::optional<int>& v) { return v ? Json(*v) : Json(nullptr); }

// Rewrites a library validation message with the config path it came from.
[[noreturn]] void rethrow_at(const std::string& path, const std::exception& e) {
  throw ValidationError(path + ": " + e.what());
}

}  // namespace

std::string_view experiment_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kIvrLinear: return "ivr-linear";
    case ExperimentKind::kIvrNonlinear: return "ivr-nonlinear";
    case ExperimentKind::kBellmanEval: return "bellman-eval";
    case ExperimentKind::kBellmanImprove: return "bellman-improve";
    case ExperimentKind::kBiasDemo: return "bias-demo";
    case ExperimentKind::kIvanov: return "ivanov";
  }
  return "?";
}

std::optional<ExperimentKind> parse_experiment(std::string_view name) {
  for (auto k : all_experiments()) {
    if (experiment_name(k) == name) return k;
  }
  return std::nullopt;
}

const std::vector<ExperimentKind>& all_experiments() {
  static const std::vector<ExperimentKind> kinds = {
      ExperimentKind::kIvrLinear,      ExperimentKind::kIvrNonlinear, ExperimentKind::kBellmanEval,
      ExperimentKind::kBellmanImprove, ExperimentKind::kBiasDemo,     ExperimentKind::kIvanov};
  return kinds;
}

TabularMDP BellmanBlock::mdp() const {
  if (!custom) return gridworld4x4(gamma);
  return TabularMDP(custom->n_states(), custom->n_actions(), custom->transitions(),
                    custom->rewards(), gamma);
}

// ---------------------------------------------------------------- solver

Json to_json(const SolverConfig& s) {
  Json j;
  j["epsilon"] = s.epsilon;
  j["max_iters"] = s.max_iters;
  if (const auto* o = std::get_if<OgdUpdate>(&s.h_update)) {
    j["h_update"] = {{"kind", "ogd"},
                     {"c", o->c ? Json(*o->c) : Json("auto")},
                     {"schedule", o->schedule == StepSchedule::kConstant ? "constant" : "inverse-sqrt"}};
  } else {
    const auto& f = std::get<FtrlUpdate>(s.h_update);
    j["h_update"] = {{"kind", "ftrl"}, {"strength", f.strength ? Json(*f.strength) : Json("auto")}};
  }
  if (const auto* g = std::get_if<GradientF>(&s.f_update)) {
    j["f_update"] = {{"kind", "gradient"}, {"steps_per_iter", g->steps_per_iter}};
  } else {
    j["f_update"] = {{"kind", "best-response"}};
  }
  j["minibatch"] = s.minibatch ? Json(*s.minibatch) : Json(nullptr);
  j["grad_tolerance"] = s.grad_tolerance;
  j["checkpoint_every"] = s.checkpoint_every;
  return j;
}

namespace {

void apply_solver(const Json& j, const std::string& path, SolverConfig& s) {
  require_object(j, path);
  reject_unknown(j, path, {"epsilon", "max_iters", "h_update", "f_update", "minibatch",
                           "grad_tolerance", "checkpoint_every"});
  set_number(j, "epsilon", path, s.epsilon);
  set_size(j, "max_iters", path, s.max_iters);
  if (const Json* h = find(j, "h_update")) {
    const std::string hp = path + ".h_update";
    require_object(*h, hp);
    const std::string kind = string(h->contains("kind") ? h->at("kind") : Json(), hp + ".kind");
    if (kind == "ogd") {
      reject_unknown(*h, hp, {"kind", "c", "schedule"});
      OgdUpdate o;
      if (const Json* c = find(*h, "c")) {
        if (!(c->is_string() && c->get<std::string>() == "auto")) o.c = number(*c, hp + ".c");
      }
      if (const Json* sc = find(*h, "schedule")) {
        const auto name = string(*sc, hp + ".schedule");
        if (name == "inverse-sqrt") {
          o.schedule = StepSchedule::kInverseSqrt;
        } else if (name == "constant") {
          o.schedule = StepSchedule::kConstant;
        } else {
          throw ValidationError(hp + ".schedule: expected inverse-sqrt or constant");
        }
      }
      s.h_update = o;
    } else if (kind == "ftrl") {
      reject_unknown(*h, hp, {"kind", "strength"});
      FtrlUpdate f;
      if (const Json* st = find(*h, "strength")) {
        if (!(st->is_string() && st->get<std::string>() == "auto")) {
          f.strength = number(*st, hp + ".strength");
        }
      }
      s.h_update = f;
    } else {
      throw ValidationError(hp + ".kind: expected ogd or ftrl");
    }
  }
  if (const Json* f = find(j, "f_update")) {
    const std::string fp = path + ".f_update";
    require_object(*f, fp);
    const std::string kind = string(f->contains("kind") ? f->at("kind") : Json(), fp + ".kind");
    if (kind == "best-response") {
      reject_unknown(*f, fp, {"kind"});
      s.f_update = BestResponseF{};
    } else if (kind == "gradient") {
      reject_unknown(*f, fp, {"kind", "steps_per_iter"});
      GradientF g;
      if (const Json* k = find(*f, "steps_per_iter")) {
        g.steps_per_iter = static_cast<int>(integer(*k, fp + ".steps_per_iter"));
      }
      s.f_update = g;
    } else {
      throw ValidationError(fp + ".kind: expected best-response or gradient");
    }
  }
  if (const Json* m = find(j, "minibatch")) {
    if (m->is_null()) {
      s.minibatch.reset();
    } else {
      const long long b = integer(*m, path + ".minibatch");
      if (b < 1) throw ValidationError(path + ".minibatch: must be >= 1");
      s.minibatch = static_cast<std::size_t>(b);
    }
  }
  set_number(j, "grad_tolerance", path, s.grad_tolerance);
  set_size(j, "checkpoint_every", path, s.checkpoint_every);
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(e.what()));
  }
}

}  // namespace

SolverConfig solver_from_json(const Json& j, const std::string& path) {
  SolverConfig s;
  apply_solver(j, path, s);
  return s;
}

// ---------------------------------------------------------------- defaults

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.seeds = {1, 2, 3};
  c.output_dir = "cmm_out/" + std::string(experiment_name(kind));
  // Run to the interior solution rather than stopping at the payoff
  // threshold: slopes are compared to closed forms at 1e-2.
  SolverConfig precise;
  precise.h_update = FtrlUpdate{};
  precise.epsilon = 1e-14;
  precise.max_iters = 100000;
  precise.grad_tolerance = 1e-10;

  switch (kind) {
    case ExperimentKind::kIvrLinear:
      c.model.h_features = FeatureMap::polynomial(1);
      c.model.f_features = FeatureMap::polynomial(1);
      c.solver = precise;
      break;
    case ExperimentKind::kIvrNonlinear:
      c.nonlinear.h_star = HStar::quadratic(0.5, 1.0, 0.0);
      c.nonlinear.discrete_z = 10;
      c.model.h_features = FeatureMap::polynomial(2);
      c.solver = precise;
      break;
    case ExperimentKind::kBiasDemo:
      c.seeds = {1};
      c.nonlinear.h_star = HStar::quadratic(1.0, 1.0, 0.0);
      c.nonlinear.discrete_z = 5;
      c.nonlinear.discrete_x = 7;
      c.model.h_features = FeatureMap::polynomial(2);
      c.solver = precise;
      break;
    case ExperimentKind::kIvanov:
      c.nonlinear.h_star = HStar::quadratic(0.0, 2.0, 0.0);
      c.nonlinear.discrete_z = 10;
      c.nonlinear.n = 1000;
      c.model.h_features = FeatureMap::polynomial(1);
      c.model.game.alpha = 1.0;
      c.model.game.h_regularizer = HRegularizer::kOlsAnchor;
      c.solver = precise;
      c.solver.grad_tolerance = 1e-8;
      break;
    case ExperimentKind::kBellmanEval:
    case ExperimentKind::kBellmanImprove:
      c.seeds = {1};
      c.model.h_features = FeatureMap::tabular(16);
      c.solver = precise;
      c.solver.epsilon = 1e-20;
      c.solver.grad_tolerance = 1e-12;
      if (kind == ExperimentKind::kBellmanImprove) c.bellman.policy = std::vector<int>(16, 0);
      break;
  }
  return c;
}

// ---------------------------------------------------------------- parsing

namespace {

HStar hstar_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  const std::string kind = string(j.contains("kind") ? j.at("kind") : Json(), path + ".kind");
  if (kind == "quadratic") {
    reject_unknown(j, path, {"kind", "qa", "qb", "qc"});
    HStar h = HStar::quadratic(1.0, 0.0, 0.0);
    set_number(j, "qa", path, h.qa);
    set_number(j, "qb", path, h.qb);
    set_number(j, "qc", path, h.qc);
    return h;
  }
  reject_unknown(j, path, {"kind"});
  if (kind == "piecewise-linear") return HStar::piecewise_linear();
  if (kind == "sigmoid") return HStar::sigmoid();
  throw ValidationError(path + ".kind: expected quadratic, piecewise-linear or sigmoid");
}

Json to_json(const HStar& h) {
  Json j;
  j["kind"] = std::string(h.name());
  if (h.kind == HStarKind::kQuadratic) {
    j["qa"] = h.qa;
    j["qb"] = h.qb;
    j["qc"] = h.qc;
  }
  return j;
}

void apply_linear(const Json& j, const std::string& path, LinearIVScenario& s) {
  require_object(j, path);
  reject_unknown(j, path, {"beta_star", "a", "b", "z_scale", "u_scale", "x_noise", "n"});
  set_number(j, "beta_star", path, s.beta_star);
  set_number(j, "a", path, s.a);
  set_number(j, "b", path, s.b);
  set_number(j, "z_scale", path, s.z_scale);
  set_number(j, "u_scale", path, s.u_scale);
  set_number(j, "x_noise", path, s.x_noise);
  set_size(j, "n", path, s.n);
  try {
    s.validate();
  } catch (const ValidationError& e) {
    rethrow_at(path, e);
  }
}

void apply_nonlinear(const Json& j, const std::string& path, NonlinearIVScenario& s) {
  require_object(j, path);
  reject_unknown(j, path, {"h_star", "a", "b", "z_scale", "u_scale", "x_noise", "n",
                           "discrete_z", "discrete_x", "x_range"});
  if (const Json* h = find(j, "h_star")) s.h_star = hstar_from_json(*h, path + ".h_star");
  set_number(j, "a", path, s.a);
  set_number(j, "b", path, s.b);
  set_number(j, "z_scale", path, s.z_scale);
  set_number(j, "u_scale", path, s.u_scale);
  set_number(j, "x_noise", path, s.x_noise);
  set_size(j, "n", path, s.n);
  if (const Json* v = find(j, "discrete_z")) s.discrete_z = optional_int(*v, path + ".discrete_z");
  if (const Json* v = find(j, "discrete_x")) s.discrete_x = optional_int(*v, path + ".discrete_x");
  set_number(j, "x_range", path, s.x_range);
  try {
    s.validate();
  } catch (const ValidationError& e) {
    rethrow_at(path, e);
  }
}

void apply_bellman(const Json& j, const std::string& path, BellmanBlock& b, bool improve) {
  require_object(j, path);
  reject_unknown(j, path, {"mdp", "gamma", "policy", "n", "literal_display", "rounds"});
  set_number(j, "gamma", path, b.gamma);
  if (!(b.gamma >= 0.0 && b.gamma < 1.0)) throw ValidationError(path + ".gamma: must be in [0, 1)");
  if (const Json* m = find(j, "mdp")) {
    if (m->is_string()) {
      if (m->get<std::string>() != "gridworld4x4") {
        throw ValidationError(path + ".mdp: expected \"gridworld4x4\" or an mdp object");
      }
      b.custom.reset();
    } else {
      Json with_gamma = *m;
      require_object(with_gamma, path + ".mdp");
      if (with_gamma.contains("gamma")) {
        throw ValidationError(path + ".mdp.gamma: set the discount at " + path + ".gamma");
      }
      with_gamma["gamma"] = b.gamma;
      b.custom = mdp_from_json(with_gamma, path + ".mdp");
    }
  }
  if (const Json* p = find(j, "policy")) {
    if (p->is_string()) {
      if (p->get<std::string>() != "uniform") {
        throw ValidationError(path + ".policy: expected \"uniform\" or a list of actions");
      }
      b.policy.reset();
    } else {
      if (!p->is_array()) throw ValidationError(path + ".policy: expected a list of actions");
      std::vector<int> pi;
      for (std::size_t i = 0; i < p->size(); ++i) {
        pi.push_back(static_cast<int>(integer((*p)[i], path + ".policy[" + std::to_string(i) + "]")));
      }
      b.policy = std::move(pi);
    }
  }
  if (const Json* n = find(j, "n")) {
    if (n->is_null() || (n->is_string() && n->get<std::string>() == "exact")) {
      b.n.reset();
    } else {
      const long long v = integer(*n, path + ".n");
      if (v < 1) throw ValidationError(path + ".n: must be >= 1 or \"exact\"");
      b.n = static_cast<std::size_t>(v);
    }
  }
  if (const Json* l = find(j, "literal_display")) b.literal_display = boolean(*l, path + ".literal_display");
  if (const Json* r = find(j, "rounds")) {
    if (!improve) throw ValidationError(path + ".rounds: only used by bellman-improve");
    b.rounds = static_cast<int>(integer(*r, path + ".rounds"));
    if (b.rounds < 1) throw ValidationError(path + ".rounds: must be >= 1");
  }
  const TabularMDP mdp = b.mdp();
  if (b.policy) {
    if (b.policy->size() != static_cast<std::size_t>(mdp.n_states())) {
      throw ValidationError(path + ".policy: length must equal the number of states");
    }
    for (int a : *b.policy) {
      if (a < 0 || a >= mdp.n_actions()) throw ValidationError(path + ".policy: action out of range");
    }
  } else if (improve) {
    b.policy = std::vector<int>(static_cast<std::size_t>(mdp.n_states()), 0);
  }
}

void apply_model(const Json& j, const std::string& path, ModelBlock& m) {
  require_object(j, path);
  reject_unknown(j, path, {"h_features", "f_features", "radius", "game"});
  if (const Json* h = find(j, "h_features")) m.h_features = feature_map_from_json(*h, path + ".h_features");
  if (const Json* f = find(j, "f_features")) {
    if (f->is_string() && f->get<std::string>() == "auto") {
      m.f_features.reset();
    } else {
      m.f_features = feature_map_from_json(*f, path + ".f_features");
    }
  }
  set_number(j, "radius", path, m.radius);
  if (!(m.radius > 0.0)) throw ValidationError(path + ".radius: must be positive");
  if (const Json* g = find(j, "game")) m.game = game_options_from_json(*g, path + ".game");
}

void apply_ivanov(const Json& j, const std::string& path, ExperimentConfig& c) {
  require_object(j, path);
  reject_unknown(j, path, {"kappa", "penalty_init", "penalty_growth", "outer_iters", "tolerance"});
  if (const Json* k = find(j, "kappa")) {
    if (k->is_string() && k->get<std::string>() == "auto") {
      c.kappa_auto = true;
    } else {
      c.kappa_auto = false;
      c.ivanov.kappa = number(*k, path + ".kappa");
    }
  }
  set_number(j, "penalty_init", path, c.ivanov.penalty_init);
  set_number(j, "penalty_growth", path, c.ivanov.penalty_growth);
  set_size(j, "outer_iters", path, c.ivanov.outer_iters);
  set_number(j, "tolerance", path, c.ivanov.tolerance);
  try {
    c.ivanov.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(e.what()));
  }
}

bool uses_linear(ExperimentKind k) { return k == ExperimentKind::kIvrLinear; }
bool uses_bellman(ExperimentKind k) {
  return k == ExperimentKind::kBellmanEval || k == ExperimentKind::kBellmanImprove;
}

// Cross-block checks that need the whole config.
void check_compatibility(const ExperimentConfig& c) {
  const auto& hf = c.model.h_features;
  if (uses_bellman(c.kind)) {
    const TabularMDP mdp = c.bellman.mdp();
    if (hf.input_dim() != 1) throw ValidationError("model.h_features: value class reads the state index");
    if (hf.kind() == FeatureKind::kTabular && hf.cardinality() != mdp.n_states()) {
      throw ValidationError("model.h_features.cardinality: must equal the number of states");
    }
    if (c.model.f_features) {
      const auto& ff = *c.model.f_features;
      const int key = c.bellman.policy ? mdp.n_states() * mdp.n_actions() : mdp.n_states();
      if (ff.kind() == FeatureKind::kTabular && ff.cardinality() != key) {
        throw ValidationError("model.f_features.cardinality: must equal " + std::to_string(key));
      }
      if (ff.kind() != FeatureKind::kTabular &&
          ff.input_dim() != (c.bellman.policy ? 2u : 1u)) {
        throw ValidationError("model.f_features: input dimension does not match the conditioning");
      }
    }
    return;
  }
  if (hf.input_dim() != 1) throw ValidationError("model.h_features: input dimension must be 1");
  if (hf.kind() == FeatureKind::kTabular) {
    throw ValidationError("model.h_features: tabular h needs an integer x; use polynomial or rbf");
  }
  const int k = uses_linear(c.kind) ? 0 : c.nonlinear.discrete_z.value_or(0);
  if (c.model.f_features) {
    const auto& ff = *c.model.f_features;
    if (ff.kind() == FeatureKind::kTabular) {
      if (k == 0) throw ValidationError("model.f_features: tabular f requires scenario.discrete_z");
      if (ff.cardinality() != k) {
        throw ValidationError("model.f_features.cardinality: must equal scenario.discrete_z");
      }
    } else if (ff.input_dim() != 1) {
      throw ValidationError("model.f_features: input dimension must be 1");
    }
  }
  if (c.kind == ExperimentKind::kBiasDemo || c.kind == ExperimentKind::kIvanov) {
    if (!c.nonlinear.discrete_z) throw ValidationError("scenario.discrete_z: required by " +
                                                       std::string(experiment_name(c.kind)));
  }
  if (c.kind == ExperimentKind::kBiasDemo) {
    if (!c.nonlinear.discrete_x) throw ValidationError("scenario.discrete_x: required by bias-demo");
    if (c.bias_h) {
      if (c.bias_h->size() != hf.output_dim()) {
        throw ValidationError("bias_h: length must equal the h feature dimension");
      }
    } else if (c.nonlinear.h_star.kind != HStarKind::kQuadratic ||
               !(hf.kind() == FeatureKind::kPolynomial && hf.degree() == 2 && !hf.is_standardized())) {
      throw ValidationError("bias_h: required unless h_star is quadratic and h is polynomial degree 2");
    }
  }
  if (c.trials < 100 && c.kind == ExperimentKind::kBiasDemo) {
    throw ValidationError("trials: insufficient trials (need >= 100)");
  }
}

}  // namespace

ExperimentConfig parse_config(const Json& j) {
  require_object(j, "config");
  reject_unknown(j, "config", {"experiment", "seeds", "output_dir", "scenario", "model", "solver",
                               "ivanov", "trials", "bias_h"});
  const std::string name = string(j.contains("experiment") ? j.at("experiment") : Json(),
                                  "config.experiment");
  const auto kind = parse_experiment(name);
  if (!kind) throw ValidationError("config.experiment: unknown experiment kind '" + name + "'");
  ExperimentConfig c = default_config(*kind);

  if (const Json* s = find(j, "seeds")) {
    if (!s->is_array() || s->empty()) throw ValidationError("config.seeds: expected a non-empty list");
    c.seeds.clear();
    for (std::size_t i = 0; i < s->size(); ++i) {
      const auto& v = (*s)[i];
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ValidationError("config.seeds[" + std::to_string(i) + "]: expected a nonnegative integer");
      }
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  if (const Json* o = find(j, "output_dir")) c.output_dir = string(*o, "config.output_dir");

  if (const Json* s = find(j, "scenario")) {
    if (uses_linear(c.kind)) {
      apply_linear(*s, "scenario", c.linear);
    } else if (uses_bellman(c.kind)) {
      apply_bellman(*s, "scenario", c.bellman, c.kind == ExperimentKind::kBellmanImprove);
    } else {
      apply_nonlinear(*s, "scenario", c.nonlinear);
    }
  }
  if (const Json* m = find(j, "model")) apply_model(*m, "model", c.model);
  if (const Json* s = find(j, "solver")) apply_solver(*s, "solver", c.solver);
  if (const Json* iv = find(j, "ivanov")) {
    if (c.kind != ExperimentKind::kIvanov) {
      throw ValidationError("config.ivanov: not used by experiment '" + name + "'");
    }
    apply_ivanov(*iv, "ivanov", c);
  }
  if (const Json* t = find(j, "trials")) {
    if (c.kind != ExperimentKind::kBiasDemo) {
      throw ValidationError("config.trials: not used by experiment '" + name + "'");
    }
    const long long v = integer(*t, "config.trials");
    if (v < 100) throw ValidationError("config.trials: insufficient trials (need >= 100)");
    c.trials = static_cast<std::size_t>(v);
  }
  if (const Json* b = find(j, "bias_h")) {
    if (c.kind != ExperimentKind::kBiasDemo) {
      throw ValidationError("config.bias_h: not used by experiment '" + name + "'");
    }
    if (b->is_string() && b->get<std::string>() == "h_star") {
      c.bias_h.reset();
    } else {
      if (!b->is_array()) throw ValidationError("config.bias_h: expected \"h_star\" or a weight list");
      std::vector<double> w;
      for (std::size_t i = 0; i < b->size(); ++i) {
        w.push_back(number((*b)[i], "config.bias_h[" + std::to_string(i) + "]"));
      }
      c.bias_h = std::move(w);
    }
  }
  check_compatibility(c);
  return c;
}

Json resolved_json(const ExperimentConfig& c) {
  Json j;
  j["experiment"] = std::string(experiment_name(c.kind));
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  if (uses_linear(c.kind)) {
    const auto& s = c.linear;
    j["scenario"] = {{"beta_star", s.beta_star}, {"a", s.a}, {"b", s.b}, {"z_scale", s.z_scale},
                     {"u_scale", s.u_scale}, {"x_noise", s.x_noise}, {"n", s.n}};
  } else if (uses_bellman(c.kind)) {
    const auto& b = c.bellman;
    Json s;
    if (b.custom) {
      Json m = to_json(*b.custom);
      m.erase("gamma");
      s["mdp"] = m;
    } else {
      s["mdp"] = "gridworld4x4";
    }
    s["gamma"] = b.gamma;
    s["policy"] = b.policy ? Json(*b.policy) : Json("uniform");
    s["n"] = b.n ? Json(*b.n) : Json("exact");
    s["literal_display"] = b.literal_display;
    if (c.kind == ExperimentKind::kBellmanImprove) s["rounds"] = b.rounds;
    j["scenario"] = s;
  } else {
    const auto& s = c.nonlinear;
    j["scenario"] = {{"h_star", to_json(s.h_star)}, {"a", s.a}, {"b", s.b},
                     {"z_scale", s.z_scale}, {"u_scale", s.u_scale}, {"x_noise", s.x_noise},
                     {"n", s.n}, {"discrete_z", optional_json(s.discrete_z)},
                     {"discrete_x", optional_json(s.discrete_x)}, {"x_range", s.x_range}};
  }
  j["model"] = {{"h_features", to_json(c.model.h_features)},
                {"f_features", c.model.f_features ? to_json(*c.model.f_features) : Json("auto")},
                {"radius", c.model.radius},
                {"game", to_json(c.model.game)}};
  j["solver"] = to_json(c.solver);
  if (c.kind == ExperimentKind::kIvanov) {
    j["ivanov"] = {{"kappa", c.kappa_auto ? Json("auto") : Json(c.ivanov.kappa)},
                   {"penalty_init", c.ivanov.penalty_init},
                   {"penalty_growth", c.ivanov.penalty_growth},
                   {"outer_iters", c.ivanov.outer_iters},
                   {"tolerance", c.ivanov.tolerance}};
  }
  if (c.kind == ExperimentKind::kBiasDemo) {
    j["trials"] = c.trials;
    j["bias_h"] = c.bias_h ? Json(*c.bias_h) : Json("h_star");
  }
  return j;
}

std::string list_experiments() {
  std::ostringstream out;
  out << "Experiment kinds (defaults shown; every field is optional except \"experiment\"):\n";
  for (auto k : all_experiments()) {
    out << "\n== " << experiment_name(k) << " ==\n" << resolved_json(default_config(k)).dump(2) << "\n";
  }
  return out.str();
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> out;
  std::string item;
  std::istringstream ss{std::string(text)};
  while (std::getline(ss, item, ',')) {
    const long long v = parse_int(item, "--seed-override");
    if (v < 0) throw ValidationError("--seed-override: seeds must be nonnegative");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  if (out.empty()) throw ValidationError("--seed-override: empty seed list");
  return out;
}

// ---------------------------------------------------------------- running

namespace {

using Metrics = std::vector<std::pair<std::string, double>>;

struct SeedContext {
  std::uint64_t seed;
  fs::path root;
  fs::path dir;
  std::vector<std::string>* manifest;
  std::ostream* log;
  bool quiet;

  fs::path file(const std::string& name) const {
    manifest->push_back((dir.lexically_relative(root) / name).generic_string());
    return dir / name;
  }
};

SolverConfig seeded(SolverConfig s, std::uint64_t seed) {
  s.seed = splitmix64(seed ^ 0x5eedULL);
  return s;
}

void write_trace(const SeedContext& ctx, const GameTrace& trace) {
  std::ofstream out(ctx.file("trace.csv"));
  write_trace_csv(out, trace);
  if (!trace.checkpoints.empty()) {
    Json cps = Json::array();
    for (const auto& [t, w] : trace.checkpoints) {
      ParamFunction fn = trace.best_h;
      fn.weights = w;
      cps.push_back({{"t", t}, {"h", to_json(fn)}});
    }
    write_json_file(ctx.file("checkpoints.json"), cps);
  }
}

void write_model(const SeedContext& ctx, const ParamFunction& h, const FunctionClass& f,
                 const GameOptions& game) {
  write_json_file(ctx.file("model.json"), to_json(ModelArtifact{h, f, game}));
}

FunctionClass f_class_for(const ExperimentConfig& c, const Dataset& data) {
  if (c.model.f_features) return {*c.model.f_features, c.model.radius};
  if (data.discrete_z()) return {FeatureMap::tabular(*data.z_cardinality()), c.model.radius};
  return {FeatureMap::polynomial(1, static_cast<int>(data.dz())), c.model.radius};
}

void add_trace_metrics(Metrics& m, const GameTrace& t) {
  m.emplace_back("game_iters", static_cast<double>(t.records.size()));
  m.emplace_back("game_best_payoff", t.best_payoff);
}

Metrics run_ivr_linear(const ExperimentConfig& c, const SeedContext& ctx) {
  LinearIVScenario sc = c.linear;
  sc.seed = ctx.seed;
  const Dataset data = generate_linear_iv(sc);
  const FunctionClass hc{c.model.h_features, c.model.radius};
  const FunctionClass fc = f_class_for(c, data);
  const ReLaGame game(data, hc, fc, c.model.game);
  const GameTrace trace = run_no_regret_game(game, seeded(c.solver, ctx.seed));

  const SlopeFit ols = ols_slope_fit(data);
  const TslsFit tsls = tsls_fit(data);
  const double beta_game = trace.best_h.weights.size() > 1 ? trace.best_h.weights[1] : NAN;

  {
    std::ofstream out(ctx.file("ivr_report.csv"));
    out << "estimator,beta_hat,stderr,abs_error\n";
    out << "ols," << format_double(ols.beta) << ',' << format_double(ols.stderr_beta) << ','
        << format_double(std::abs(ols.beta - sc.beta_star)) << '\n';
    out << "tsls," << format_double(tsls.beta) << ',' << format_double(tsls.stderr_beta) << ','
        << format_double(std::abs(tsls.beta - sc.beta_star)) << '\n';
    out << "game," << format_double(beta_game) << ",nan,"
        << format_double(std::abs(beta_game - sc.beta_star)) << '\n';
  }
  write_trace(ctx, trace);
  write_model(ctx, trace.best_h, fc, c.model.game);
  write_dataset_csv(ctx.file("dataset.csv"), data);

  Metrics m{{"beta_ols", ols.beta},
            {"beta_tsls", tsls.beta},
            {"beta_game", beta_game},
            {"stderr_ols", ols.stderr_beta},
            {"stderr_tsls", tsls.stderr_beta},
            {"abs_error_ols", std::abs(ols.beta - sc.beta_star)},
            {"abs_error_tsls", std::abs(tsls.beta - sc.beta_star)},
            {"abs_error_game", std::abs(beta_game - sc.beta_star)},
            {"game_tsls_gap", std::abs(beta_game - tsls.beta)},
            {"weak_instrument", tsls.weak_instrument ? 1.0 : 0.0}};
  add_trace_metrics(m, trace);
  return m;
}

Metrics run_ivr_nonlinear(const ExperimentConfig& c, const SeedContext& ctx) {
  NonlinearIVScenario sc = c.nonlinear;
  sc.seed = ctx.seed;
  const Dataset data = generate_nonlinear_iv(sc);
  const FunctionClass hc{c.model.h_features, c.model.radius};
  const FunctionClass fc = f_class_for(c, data);
  const ReLaGame game(data, hc, fc, c.model.game);
  const GameTrace trace = run_no_regret_game(game, seeded(c.solver, ctx.seed));
  const ParamFunction ols = ols_estimate(data, c.model.h_features);

  Metrics m;
  const auto& wg = trace.best_h.weights;
  for (Eigen::Index k = 0; k < wg.size(); ++k) m.emplace_back("game_w" + std::to_string(k), wg[k]);
  for (Eigen::Index k = 0; k < ols.weights.size(); ++k) {
    m.emplace_back("ols_w" + std::to_string(k), ols.weights[k]);
  }
  if (data.discrete_z()) {
    m.emplace_back("cmse_game", conditional_slack(game, trace.best_h));
    m.emplace_back("cmse_ols", conditional_slack(game, ols));
    if (sc.discrete_x) {
      const TwoStageFit ts = discrete_two_stage_baseline(data, c.model.h_features, c.model.radius);
      for (Eigen::Index k = 0; k < ts.h.weights.size(); ++k) {
        m.emplace_back("two_stage_w" + std::to_string(k), ts.h.weights[k]);
      }
      m.emplace_back("cmse_two_stage", conditional_slack(game, ts.h));
      m.emplace_back("two_stage_smoothed_rows", ts.smoothed_rows);
    }
    std::ofstream out(ctx.file("slack.csv"));
    write_slack_csv(out, slack_report(game, trace.best_h, best_response_f(game, trace.best_h)));
  }
  add_trace_metrics(m, trace);
  write_trace(ctx, trace);
  write_model(ctx, trace.best_h, fc, c.model.game);
  write_dataset_csv(ctx.file("dataset.csv"), data);
  return m;
}

Metrics run_bias_demo(const ExperimentConfig& c, const SeedContext& ctx) {
  NonlinearIVScenario sc = c.nonlinear;
  sc.seed = ctx.seed;
  const Dataset data = generate_nonlinear_iv(sc);
  ParamFunction h = ParamFunction::zero(c.model.h_features, c.model.radius);
  if (c.bias_h) {
    h.weights = Eigen::Map<const Eigen::VectorXd>(c.bias_h->data(),
                                                  static_cast<Eigen::Index>(c.bias_h->size()));
  } else {
    h.weights = Eigen::Vector3d(sc.h_star.qc, sc.h_star.qb, sc.h_star.qa);
  }
  const BiasReport r = gradient_bias_experiment(data, h, c.trials, splitmix64(ctx.seed));

  Metrics m;
  std::ofstream out(ctx.file("bias.csv"));
  out << "coord,exact_two_stage,single_two_stage,single_two_stage_stderr,predicted_bias,"
         "observed_bias,exact_rela,single_rela,single_rela_stderr\n";
  for (Eigen::Index k = 0; k < r.exact_two_stage.size(); ++k) {
    const std::string s = std::to_string(k);
    const double observed = r.single_two_stage.mean[k] - r.exact_two_stage[k];
    out << k << ',' << format_double(r.exact_two_stage[k]) << ','
        << format_double(r.single_two_stage.mean[k]) << ','
        << format_double(r.single_two_stage.stderr_mean[k]) << ','
        << format_double(r.predicted_bias[k]) << ',' << format_double(observed) << ','
        << format_double(r.exact_rela[k]) << ',' << format_double(r.single_rela.mean[k]) << ','
        << format_double(r.single_rela.stderr_mean[k]) << '\n';
    m.emplace_back("exact_two_stage_" + s, r.exact_two_stage[k]);
    m.emplace_back("single_two_stage_" + s, r.single_two_stage.mean[k]);
    m.emplace_back("single_two_stage_stderr_" + s, r.single_two_stage.stderr_mean[k]);
    m.emplace_back("predicted_bias_" + s, r.predicted_bias[k]);
    m.emplace_back("observed_bias_" + s, observed);
    m.emplace_back("exact_rela_" + s, r.exact_rela[k]);
    m.emplace_back("single_rela_" + s, r.single_rela.mean[k]);
    m.emplace_back("single_rela_stderr_" + s, r.single_rela.stderr_mean[k]);
  }
  m.emplace_back("smoothed_rows", r.smoothed_rows);
  return m;
}

Metrics run_ivanov(const ExperimentConfig& c, const SeedContext& ctx) {
  NonlinearIVScenario sc = c.nonlinear;
  sc.seed = ctx.seed;
  const Dataset data = generate_nonlinear_iv(sc);
  const FunctionClass hc{c.model.h_features, c.model.radius};
  const FunctionClass fc = f_class_for(c, data);
  const ReLaGame game(data, hc, fc, c.model.game);
  IvanovConfig icfg = c.ivanov;
  if (c.kappa_auto) icfg.kappa = kappa_of_N(*data.z_cardinality(), data.size());
  write_dataset_csv(ctx.file("dataset.csv"), data);
  const IvanovResult res = solve_ivanov(game, icfg, seeded(c.solver, ctx.seed));

  Metrics m{{"kappa", icfg.kappa},
            {"achieved_slack", res.achieved_slack},
            {"penalty", res.penalty},
            {"outer_iterations", static_cast<double>(res.outer_iterations)}};
  for (Eigen::Index k = 0; k < res.h.weights.size(); ++k) {
    m.emplace_back("h_w" + std::to_string(k), res.h.weights[k]);
  }
  add_trace_metrics(m, res.trace);
  write_trace(ctx, res.trace);
  write_model(ctx, res.h, fc, c.model.game);
  std::ofstream out(ctx.file("slack.csv"));
  const ReLaGame plain = game.penalized(1.0);
  write_slack_csv(out, slack_report(plain, res.h, best_response_f(plain, res.h)));
  return m;
}

FeatureMap bellman_f(const ExperimentConfig& c, const TabularMDP& mdp, bool state_action) {
  if (c.model.f_features) return *c.model.f_features;
  return FeatureMap::tabular(state_action ? mdp.n_states() * mdp.n_actions() : mdp.n_states());
}

void write_rounds_header(std::ostream& out) { out << "round,state,V_game,V_exact,abs_err\n"; }

double write_round(std::ostream& out, int round, const Eigen::VectorXd& game,
                   const Eigen::VectorXd& exact) {
  double sup = 0.0;
  for (Eigen::Index s = 0; s < game.size(); ++s) {
    const double e = std::abs(game[s] - exact[s]);
    sup = std::max(sup, e);
    out << round << ',' << s << ',' << format_double(game[s]) << ',' << format_double(exact[s])
        << ',' << format_double(e) << '\n';
  }
  return sup;
}

void write_policy(const SeedContext& ctx, const std::vector<int>& pi,
                  const std::vector<int>* optimal) {
  std::ofstream out(ctx.file("policy.csv"));
  out << "state,action" << (optimal ? ",optimal_action\n" : "\n");
  for (std::size_t s = 0; s < pi.size(); ++s) {
    out << s << ',' << pi[s];
    if (optimal) out << ',' << (*optimal)[s];
    out << '\n';
  }
  if (!ctx.quiet) {
    *ctx.log << "seed " << ctx.seed << " final policy:";
    for (int a : pi) *ctx.log << ' ' << a;
    *ctx.log << '\n';
  }
}

Metrics run_bellman_eval(const ExperimentConfig& c, const SeedContext& ctx) {
  const TabularMDP mdp = c.bellman.mdp();
  const std::vector<int>* pi = c.bellman.policy ? &*c.bellman.policy : nullptr;
  const TransitionDataset ds =
      pi ? make_transition_dataset(mdp, *pi, c.bellman.n, ctx.seed)
         : make_transition_dataset(mdp, uniform_exploration(mdp), c.bellman.n, ctx.seed);
  BellmanOptions bo;
  bo.literal_display = c.bellman.literal_display;
  bo.game = c.model.game;
  const PolicyEvaluation ev = evaluate_policy_via_game(
      ds, pi, mdp.gamma(), c.model.h_features, bellman_f(c, mdp, pi != nullptr),
      seeded(c.solver, ctx.seed), bo);
  const Eigen::VectorXd exact =
      pi ? policy_evaluation_exact(mdp, *pi)
         : policy_evaluation_exact(mdp, Eigen::MatrixXd::Constant(mdp.n_states(), mdp.n_actions(),
                                                                   1.0 / mdp.n_actions()));
  std::ofstream out(ctx.file("bellman_rounds.csv"));
  write_rounds_header(out);
  const double sup = write_round(out, 0, ev.values, exact);
  write_trace(ctx, ev.trace);
  Metrics m{{"sup_error", sup}};
  add_trace_metrics(m, ev.trace);
  return m;
}

Metrics run_bellman_improve(const ExperimentConfig& c, const SeedContext& ctx) {
  const TabularMDP mdp = c.bellman.mdp();
  const TransitionDataset ds =
      make_transition_dataset(mdp, uniform_exploration(mdp), c.bellman.n, ctx.seed);
  BellmanOptions bo;
  bo.literal_display = c.bellman.literal_display;
  bo.game = c.model.game;
  const ImprovementResult res = greedy_improvement_loop(
      ds, mdp.gamma(), c.model.h_features, bellman_f(c, mdp, true), seeded(c.solver, ctx.seed),
      c.bellman.rounds, *c.bellman.policy, bo);
  const PolicyValuePair opt = value_iteration(mdp, 1e-12);

  std::ofstream out(ctx.file("bellman_rounds.csv"));
  write_rounds_header(out);
  double last_sup = 0.0;
  for (std::size_t k = 0; k < res.history.size(); ++k) {
    const auto& r = res.history[k];
    last_sup = write_round(out, static_cast<int>(k), r.values, policy_evaluation_exact(mdp, r.policy));
  }
  write_policy(ctx, res.final.policy, &opt.policy);
  const double matches = res.final.policy == opt.policy ? 1.0 : 0.0;
  return {{"rounds_run", static_cast<double>(res.history.size())},
          {"converged", res.converged ? 1.0 : 0.0},
          {"matches_optimal", matches},
          {"sup_error_last_round", last_sup},
          {"sup_error_vs_optimal", (res.final.values - opt.values).cwiseAbs().maxCoeff()}};
}

Metrics run_one(const ExperimentConfig& c, const SeedContext& ctx) {
  switch (c.kind) {
    case ExperimentKind::kIvrLinear: return run_ivr_linear(c, ctx);
    case ExperimentKind::kIvrNonlinear: return run_ivr_nonlinear(c, ctx);
    case ExperimentKind::kBellmanEval: return run_bellman_eval(c, ctx);
    case ExperimentKind::kBellmanImprove: return run_bellman_improve(c, ctx);
    case ExperimentKind::kBiasDemo: return run_bias_demo(c, ctx);
    case ExperimentKind::kIvanov: return run_ivanov(c, ctx);
  }
  return {};
}

}  // namespace

RunReport run_experiment(ExperimentConfig cfg, const RunOptions& opts, std::ostream& log) {
  if (opts.out) cfg.output_dir = *opts.out;
  if (opts.seeds) cfg.seeds = *opts.seeds;
  if (cfg.seeds.empty()) throw ValidationError("config.seeds: expected a non-empty list");
  std::sort(cfg.seeds.begin(), cfg.seeds.end());
  cfg.seeds.erase(std::unique(cfg.seeds.begin(), cfg.seeds.end()), cfg.seeds.end());

  const fs::path root = cfg.output_dir;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) {
    throw ValidationError("output_dir: cannot create '" + root.string() + "'");
  }

  RunReport report;
  Json timings = Json::object();
  const auto t0 = std::chrono::steady_clock::now();
  for (const std::uint64_t seed : cfg.seeds) {
    const fs::path dir = root / ("seed_" + std::to_string(seed));
    fs::create_directories(dir, ec);
    SeedContext ctx{seed, root, dir, &report.manifest, &log, opts.quiet};
    const auto ts = std::chrono::steady_clock::now();
    try {
      report.rows.emplace_back(seed, run_one(cfg, ctx));
      if (!opts.quiet) log << experiment_name(cfg.kind) << " seed " << seed << ": ok\n";
    } catch (const DivergenceError& e) {
      report.failures.push_back({seed, "divergence", e.what()});
    } catch (const InfeasibleError& e) {
      report.failures.push_back({seed, "infeasible", e.what()});
    } catch (const NumericalError& e) {
      report.failures.push_back({seed, "numerical", e.what()});
    } catch (const ValidationError& e) {
      report.failures.push_back({seed, "validation", e.what()});
    } catch (const std::exception& e) {
      report.failures.push_back({seed, "error", e.what()});
    }
    if (!report.failures.empty() && report.failures.back().seed == seed && !opts.quiet) {
      log << experiment_name(cfg.kind) << " seed " << seed << " failed ("
          << report.failures.back().kind << "): " << report.failures.back().message << '\n';
    }
    timings["seed_" + std::to_string(seed)] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - ts).count();
  }
  timings["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // results.csv: long format, seeds ascending, no timings.
  {
    std::ofstream out(root / "results.csv");
    out << "seed,metric,value\n";
    for (const auto& [seed, metrics] : report.rows) {
      for (const auto& [k, v] : metrics) out << seed << ',' << k << ',' << format_double(v) << '\n';
    }
  }
  write_json_file(root / "resolved_config.json", resolved_json(cfg));

  // Aggregates in first-seen metric order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> by_metric;
  for (const auto& [seed, metrics] : report.rows) {
    for (const auto& [k, v] : metrics) {
      if (!by_metric.count(k)) order.push_back(k);
      by_metric[k].push_back(v);
    }
  }
  Json aggregates = Json::object();
  for (const auto& k : order) {
    const auto& vs = by_metric[k];
    double mean = 0.0;
    for (double v : vs) mean += v;
    mean /= static_cast<double>(vs.size());
    double var = 0.0;
    for (double v : vs) var += (v - mean) * (v - mean);
    const double se = vs.size() > 1
                          ? std::sqrt(var / static_cast<double>(vs.size() - 1) /
                                      static_cast<double>(vs.size()))
                          : 0.0;
    aggregates[k] = {{"mean", mean}, {"stderr", se}, {"n", vs.size()}};
  }

  if (report.failures.empty()) {
    report.exit_code = 0;
  } else if (report.rows.empty() &&
             std::all_of(report.failures.begin(), report.failures.end(),
                         [](const SeedFailure& f) { return f.kind == "divergence"; })) {
    report.exit_code = 3;
  } else {
    report.exit_code = 4;
  }

  Json rows = Json::array();
  for (const auto& [seed, metrics] : report.rows) {
    Json r = Json::object();
    r["seed"] = seed;
    for (const auto& [k, v] : metrics) r[k] = v;
    rows.push_back(r);
  }
  Json failures = Json::array();
  for (const auto& f : report.failures) {
    failures.push_back({{"seed", f.seed}, {"kind", f.kind}, {"message", f.message}});
  }
  std::vector<std::string> manifest = {"results.csv", "report.json", "resolved_config.json"};
  manifest.insert(manifest.end(), report.manifest.begin(), report.manifest.end());
  report.manifest = manifest;
  Json rep;
  rep["config"] = resolved_json(cfg);
  rep["results"] = rows;
  rep["aggregates"] = aggregates;
  rep["failures"] = failures;
  rep["manifest"] = manifest;
  rep["timings_seconds"] = timings;
  rep["exit_code"] = report.exit_code;
  write_json_file(root / "report.json", rep);
  return report;
}

int diagnose(const fs::path& artifact, const fs::path& dataset,
             const std::optional<fs::path>& out, std::size_t top, std::ostream& log,
             std::ostream& err) {
  try {
    const ModelArtifact model = model_from_json(read_json_file(artifact));
    std::optional<int> card;
    if (model.f_class.features.kind() == FeatureKind::kTabular) {
      card = model.f_class.features.cardinality();
    }
    const Dataset data = read_dataset_csv(dataset, card);
    if (!data.discrete_z()) throw ValidationError("dataset not discrete in z");
    const auto& hf = model.h.features;
    if (hf.kind() == FeatureKind::kTabular ? data.dx() != 1 : hf.input_dim() != data.dx()) {
      throw ValidationError("artifact h expects input dimension " +
                            std::to_string(hf.input_dim()) + ", dataset has dx = " +
                            std::to_string(data.dx()));
    }
    const auto& ff = model.f_class.features;
    if (ff.kind() != FeatureKind::kTabular && ff.input_dim() != data.dz()) {
      throw ValidationError("artifact f expects input dimension " +
                            std::to_string(ff.input_dim()) + ", dataset has dz = " +
                            std::to_string(data.dz()));
    }
    const ReLaGame game(data, FunctionClass{hf, model.h.radius}, model.f_class, model.game);
    const ParamFunction f = best_response_f(game, model.h);
    const SlackReport rep = slack_report(game, model.h, f);
    const fs::path path = out ? *out : fs::path("slack.csv");
    {
      std::ofstream o(path);
      if (!o) throw ValidationError("cannot write '" + path.string() + "'");
      write_slack_csv(o, rep);
    }
    log << "z_key,n_z,f_value,residual_mean,weighted_mismatch\n";
    for (std::size_t i = 0; i < std::min(top, rep.entries.size()); ++i) {
      const auto& e = rep.entries[i];
      log << e.z_key << ',' << e.n_z << ',' << format_double(e.f_value) << ','
          << format_double(e.residual_mean) << ','
          << format_double(static_cast<double>(e.n_z) * e.f_value * e.f_value) << '\n';
    }
    log << "aggregate E_z[f(z)^2] = " << format_double(rep.aggregate) << '\n';
    return 0;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace cmm
