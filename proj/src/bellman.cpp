#include "cmm/bellman.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "cmm/error.hpp"
#include "cmm/rng.hpp"

namespace cmm {

TabularMDP::TabularMDP(int n_states, int n_actions, std::vector<double> transitions,
                       std::vector<double> rewards, double gamma)
    : s_(n_states), a_(n_actions), gamma_(gamma),
      transitions_(std::move(transitions)), rewards_(std::move(rewards)) {
  if (s_ < 1 || a_ < 1) throw ValidationError("mdp: need at least one state and one action");
  if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw ValidationError("mdp.gamma must be in [0, 1)");
  const auto sa = static_cast<std::size_t>(s_) * static_cast<std::size_t>(a_);
  if (transitions_.size() != sa * static_cast<std::size_t>(s_)) {
    throw ValidationError("mdp.transitions must have S*A*S entries");
  }
  if (rewards_.size() != sa) throw ValidationError("mdp.rewards must have S*A entries");
  for (int s = 0; s < s_; ++s) {
    for (int a = 0; a < a_; ++a) {
      double total = 0.0;
      for (double p : row(s, a)) {
        if (!(p >= 0.0) || !std::isfinite(p)) {
          throw ValidationError("mdp.transitions entries must be nonnegative");
        }
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-12) {
        throw ValidationError("mdp.transitions row (" + std::to_string(s) + "," +
                              std::to_string(a) + ") does not sum to 1");
      }
      const double r = reward(s, a);
      if (!(std::abs(r) <= 1.0)) throw ValidationError("mdp.rewards must lie in [-1, 1]");
    }
  }
}

TabularMDP gridworld4x4(double gamma) {
  constexpr int kS = 16, kA = 4, kGoal = 15;
  std::vector<double> t(kS * kA * kS, 0.0), r(kS * kA, 0.0);
  for (int s = 0; s < kS; ++s) {
    const int row = s / 4, col = s % 4;
    for (int a = 0; a < kA; ++a) {
      int next = s;
      if (s != kGoal) {
        int nr = row, nc = col;
        if (a == 0) nr = std::max(0, row - 1);
        if (a == 1) nr = std::min(3, row + 1);
        if (a == 2) nc = std::max(0, col - 1);
        if (a == 3) nc = std::min(3, col + 1);
        next = 4 * nr + nc;
        if (next == kGoal) r[static_cast<std::size_t>(s * kA + a)] = 1.0;
      }
      t[static_cast<std::size_t>((s * kA + a) * kS + next)] = 1.0;
    }
  }
  return TabularMDP(kS, kA, std::move(t), std::move(r), gamma);
}

Eigen::MatrixXd q_values(const TabularMDP& mdp, const Eigen::VectorXd& v) {
  if (v.size() != mdp.n_states()) throw ValidationError("value vector length must equal S");
  Eigen::MatrixXd q(mdp.n_states(), mdp.n_actions());
  for (int s = 0; s < mdp.n_states(); ++s) {
    for (int a = 0; a < mdp.n_actions(); ++a) {
      const auto p = mdp.row(s, a);
      double ev = 0.0;
      for (int k = 0; k < mdp.n_states(); ++k) ev += p[static_cast<std::size_t>(k)] * v[k];
      q(s, a) = mdp.reward(s, a) + mdp.gamma() * ev;
    }
  }
  return q;
}

std::vector<int> greedy_policy(const Eigen::MatrixXd& q, double tie) {
  std::vector<int> pi(static_cast<std::size_t>(q.rows()), 0);
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    const double best = q.row(s).maxCoeff();
    for (Eigen::Index a = 0; a < q.cols(); ++a) {
      if (q(s, a) >= best - tie) {
        pi[static_cast<std::size_t>(s)] = static_cast<int>(a);
        break;
      }
    }
  }
  return pi;
}

double bellman_residual_sup(const TabularMDP& mdp, const Eigen::VectorXd& v) {
  const Eigen::MatrixXd q = q_values(mdp, v);
  return (q.rowwise().maxCoeff() - v).cwiseAbs().maxCoeff();
}

PolicyValuePair value_iteration(const TabularMDP& mdp, double tol,
                                const std::function<void(const Eigen::VectorXd&)>& on_iterate,
                                double tie) {
  if (!(tol > 0.0)) throw ValidationError("value_iteration: tol must be positive");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mdp.n_states());
  for (;;) {
    if (on_iterate) on_iterate(v);
    const Eigen::MatrixXd q = q_values(mdp, v);
    const Eigen::VectorXd next = q.rowwise().maxCoeff();
    if ((next - v).cwiseAbs().maxCoeff() <= tol) return {greedy_policy(q, tie), v};
    v = next;
  }
}

Eigen::VectorXd policy_evaluation_exact(const TabularMDP& mdp, const std::vector<int>& policy) {
  if (policy.size() != static_cast<std::size_t>(mdp.n_states())) {
    throw ValidationError("policy length must equal S");
  }
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(mdp.n_states(), mdp.n_actions());
  for (int s = 0; s < mdp.n_states(); ++s) {
    const int a = policy[static_cast<std::size_t>(s)];
    if (a < 0 || a >= mdp.n_actions()) throw ValidationError("policy action out of range");
    probs(s, a) = 1.0;
  }
  return policy_evaluation_exact(mdp, probs);
}

Eigen::VectorXd policy_evaluation_exact(const TabularMDP& mdp, const Eigen::MatrixXd& probs) {
  const int S = mdp.n_states();
  if (probs.rows() != S || probs.cols() != mdp.n_actions()) {
    throw ValidationError("policy matrix must be S x A");
  }
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(S, S);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < mdp.n_actions(); ++a) {
      const double pa = probs(s, a);
      if (pa == 0.0) continue;
      r[s] += pa * mdp.reward(s, a);
      const auto p = mdp.row(s, a);
      for (int k = 0; k < S; ++k) m(s, k) -= mdp.gamma() * pa * p[static_cast<std::size_t>(k)];
    }
  }
  return m.partialPivLu().solve(r);
}

Eigen::MatrixXd uniform_exploration(const TabularMDP& mdp) {
  return Eigen::MatrixXd::Constant(mdp.n_states(), mdp.n_actions(),
                                   1.0 / (mdp.n_states() * mdp.n_actions()));
}

TransitionDataset make_transition_dataset(const TabularMDP& mdp, const Eigen::MatrixXd& d,
                                          std::optional<std::size_t> n, std::uint64_t seed) {
  const int S = mdp.n_states(), A = mdp.n_actions();
  if (d.rows() != S || d.cols() != A) throw ValidationError("distribution must be S x A");
  if ((d.array() < 0.0).any() || !d.allFinite()) {
    throw ValidationError("distribution entries must be nonnegative");
  }
  if (std::abs(d.sum() - 1.0) > 1e-12) throw ValidationError("distribution must sum to 1");
  if (n && *n < 1) throw ValidationError("n must be >= 1");

  TransitionDataset out;
  out.n_states = S;
  out.n_actions = A;
  out.exact = !n;
  if (!n) {
    if ((d.array() <= 0.0).any()) throw ValidationError("coverage violated");
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        const auto p = mdp.row(s, a);
        for (int k = 0; k < S; ++k) {
          const double pk = p[static_cast<std::size_t>(k)];
          if (pk > 0.0) out.tuples.push_back({s, a, mdp.reward(s, a), k, d(s, a) * pk, 0});
        }
      }
    }
    return out;
  }

  RngHandle rng(seed);
  std::vector<double> cum_sa;
  double acc = 0.0;
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) cum_sa.push_back(acc += d(s, a));
  }
  std::map<std::tuple<int, int, int>, std::size_t> counts;
  std::vector<double> cum_s(static_cast<std::size_t>(S));
  for (std::size_t i = 0; i < *n; ++i) {
    const auto sa = static_cast<int>(rng.from_cumulative(cum_sa));
    const int s = sa / A, a = sa % A;
    const auto p = mdp.row(s, a);
    double c = 0.0;
    for (int k = 0; k < S; ++k) cum_s[static_cast<std::size_t>(k)] = c += p[static_cast<std::size_t>(k)];
    const auto next = static_cast<int>(rng.from_cumulative(cum_s));
    ++counts[{s, a, next}];
  }
  for (const auto& [key, count] : counts) {
    const auto [s, a, next] = key;
    out.tuples.push_back({s, a, mdp.reward(s, a), next,
                          static_cast<double>(count) / static_cast<double>(*n), count});
  }
  return out;
}

TransitionDataset make_transition_dataset(const TabularMDP& mdp, const std::vector<int>& policy,
                                          std::optional<std::size_t> n, std::uint64_t seed) {
  if (policy.size() != static_cast<std::size_t>(mdp.n_states())) {
    throw ValidationError("policy length must equal S");
  }
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(mdp.n_states(), mdp.n_actions());
  for (int s = 0; s < mdp.n_states(); ++s) {
    const int a = policy[static_cast<std::size_t>(s)];
    if (a < 0 || a >= mdp.n_actions()) throw ValidationError("policy action out of range");
    d(s, a) = 1.0 / mdp.n_states();
  }
  if (!n) {
    // Only the policy's own pairs need coverage here.
    TransitionDataset out;
    out.n_states = mdp.n_states();
    out.n_actions = mdp.n_actions();
    out.exact = true;
    for (int s = 0; s < mdp.n_states(); ++s) {
      const int a = policy[static_cast<std::size_t>(s)];
      const auto p = mdp.row(s, a);
      for (int k = 0; k < mdp.n_states(); ++k) {
        const double pk = p[static_cast<std::size_t>(k)];
        if (pk > 0.0) out.tuples.push_back({s, a, mdp.reward(s, a), k, d(s, a) * pk, 0});
      }
    }
    return out;
  }
  return make_transition_dataset(mdp, d, n, seed);
}

namespace {

std::vector<const Transition*> restrict_to(const TransitionDataset& ds,
                                           const std::vector<int>* policy) {
  std::vector<const Transition*> kept;
  if (policy && policy->size() != static_cast<std::size_t>(ds.n_states)) {
    throw ValidationError("policy length must equal S");
  }
  for (const auto& t : ds.tuples) {
    if (!policy || (*policy)[static_cast<std::size_t>(t.s)] == t.a) kept.push_back(&t);
  }
  if (kept.empty()) throw ValidationError("coverage violated: no data for the policy's actions");
  if (policy) {
    std::vector<bool> seen(static_cast<std::size_t>(ds.n_states), false);
    for (const auto* t : kept) seen[static_cast<std::size_t>(t->s)] = true;
    for (int s = 0; s < ds.n_states; ++s) {
      if (!seen[static_cast<std::size_t>(s)]) {
        throw ValidationError("coverage violated: no data for (s=" + std::to_string(s) +
                              ", a=" + std::to_string((*policy)[static_cast<std::size_t>(s)]) +
                              ")");
      }
    }
  }
  return kept;
}

}  // namespace

Dataset transition_view(const TransitionDataset& ds, const std::vector<int>* policy,
                        Conditioning cond) {
  const auto kept = restrict_to(ds, policy);
  double total = 0.0;
  for (const auto* t : kept) total += t->weight;
  std::vector<SampleTriple> samples;
  std::vector<double> w;
  for (const auto* t : kept) {
    SampleTriple s;
    s.x = {static_cast<double>(t->s)};
    s.y = t->r;
    if (cond == Conditioning::kStateAction) {
      s.z = {static_cast<double>(t->s), static_cast<double>(t->a)};
      s.z_key = t->s * ds.n_actions + t->a;
    } else {
      s.z = {static_cast<double>(t->s)};
      s.z_key = t->s;
    }
    samples.push_back(std::move(s));
    w.push_back(t->weight / total);
  }
  // Renormalize once more so the sum is 1 to the last bit the validator checks.
  double sum = 0.0;
  for (double x : w) sum += x;
  for (double& x : w) x /= sum;
  const int card = cond == Conditioning::kStateAction ? ds.n_states * ds.n_actions : ds.n_states;
  return Dataset(std::move(samples), card, std::move(w));
}

ReLaGame bellman_game(const TransitionDataset& ds, const std::vector<int>* policy, double gamma,
                      const FunctionClass& v_class, const FunctionClass& f_class,
                      const BellmanOptions& opts) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("gamma must be in [0, 1)");
  const Conditioning cond = policy ? Conditioning::kStateAction : Conditioning::kState;
  Dataset data = transition_view(ds, policy, cond);
  const auto kept = restrict_to(ds, policy);
  const double g = opts.literal_display ? 1.0 : gamma;
  const auto d = v_class.features.output_dim();
  DesignMatrix psi(kept.size(), d);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const double s = kept[i]->s, sn = kept[i]->s_next;
    const Eigen::VectorXd a = v_class.features.features(std::span<const double>(&s, 1));
    const Eigen::VectorXd b = v_class.features.features(std::span<const double>(&sn, 1));
    for (std::size_t j = 0; j < d; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      psi(i, j) = a[jj] - g * b[jj];
    }
  }
  return ReLaGame::with_design(std::move(data), v_class, f_class, std::move(psi), opts.game);
}

namespace {

Eigen::VectorXd state_values(const ParamFunction& v, int n_states) {
  Eigen::VectorXd out(n_states);
  for (int s = 0; s < n_states; ++s) {
    const double x = s;
    out[s] = eval(v, std::span<const double>(&x, 1));
  }
  return out;
}

}  // namespace

PolicyEvaluation evaluate_policy_via_game(const TransitionDataset& ds,
                                          const std::vector<int>* policy, double gamma,
                                          const FeatureMap& v_class, const FeatureMap& f_class,
                                          const SolverConfig& cfg, const BellmanOptions& opts) {
  const ReLaGame game = bellman_game(ds, policy, gamma, FunctionClass{v_class, kDefaultRadius},
                                     FunctionClass{f_class, kDefaultRadius}, opts);
  PolicyEvaluation out;
  out.trace = run_no_regret_game(game, cfg);
  out.v = out.trace.best_h;
  out.values = state_values(out.v, ds.n_states);
  return out;
}

Eigen::MatrixXd dataset_q_values(const TransitionDataset& ds, const Eigen::VectorXd& v,
                                 double gamma) {
  if (v.size() != ds.n_states) throw ValidationError("value vector length must equal S");
  Eigen::MatrixXd num = Eigen::MatrixXd::Zero(ds.n_states, ds.n_actions);
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(ds.n_states, ds.n_actions);
  for (const auto& t : ds.tuples) {
    num(t.s, t.a) += t.weight * (t.r + gamma * v[t.s_next]);
    mass(t.s, t.a) += t.weight;
  }
  if ((mass.array() <= 0.0).any()) throw ValidationError("coverage violated");
  return num.cwiseQuotient(mass);
}

ImprovementResult greedy_improvement_loop(const TransitionDataset& ds, double gamma,
                                          const FeatureMap& v_class, const FeatureMap& f_class,
                                          const SolverConfig& cfg, int rounds,
                                          std::vector<int> initial_policy,
                                          const BellmanOptions& opts) {
  if (rounds < 1) throw ValidationError("rounds must be >= 1");
  std::vector<int> pi = initial_policy.empty()
                            ? std::vector<int>(static_cast<std::size_t>(ds.n_states), 0)
                            : std::move(initial_policy);
  // Checked up front so a gap fails before any game is solved.
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(ds.n_states, ds.n_actions);
  for (const auto& t : ds.tuples) mass(t.s, t.a) += t.weight;
  if ((mass.array() <= 0.0).any()) throw ValidationError("coverage violated");

  ImprovementResult out;
  for (int k = 0; k < rounds; ++k) {
    const PolicyEvaluation ev =
        evaluate_policy_via_game(ds, &pi, gamma, v_class, f_class, cfg, opts);
    out.history.push_back({pi, ev.values});
    const std::vector<int> next = greedy_policy(dataset_q_values(ds, ev.values, gamma));
    out.final = {pi, ev.values};
    if (next == pi) {
      out.converged = true;
      break;
    }
    pi = next;
  }
  return out;
}

}  // namespace cmm
