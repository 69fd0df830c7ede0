#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "cmm/dataset.hpp"
#include "cmm/function_classes.hpp"

namespace cmm {

enum class HRegularizer { kNone, kOlsAnchor };

struct GameOptions {
  double alpha = 0.0;
  HRegularizer h_regularizer = HRegularizer::kNone;
  // Ridge added to the multiplier Gram. Unset: 1e-8 * trace(G_f) / dim.
  std::optional<double> f_ridge;
};

// Empirical moments the payoff depends on, with psi the h-design and phi the
// f-design:
//   gram_f = E[phi phi^T], cross_fh = E[phi psi^T], cross_fy = E[y phi],
//   gram_h = E[psi psi^T], cross_hy = E[y psi],   second_y = E[y^2].
struct GameMoments {
  Eigen::MatrixXd gram_f;
  Eigen::MatrixXd cross_fh;
  Eigen::VectorXd cross_fy;
  Eigen::MatrixXd gram_h;
  Eigen::VectorXd cross_hy;
  double second_y = 0.0;
};

// The regularized Lagrangian game
//
//   L(h, f) = s * E[2 (y - psi^T theta) f(z) - f(z)^2] + alpha * R(h),
//
// with R(h) = E[(psi^T theta - y)^2] under the OLS anchor and s the weight on
// the Lagrangian term (1 unless a penalty method rescales it). For regression
// psi = phi_h(x); Bellman evaluation supplies psi = phi(s) - gamma phi(s')
// through with_design. Copies share the immutable data.
class ReLaGame {
 public:
  ReLaGame(Dataset data, FunctionClass h_class, FunctionClass f_class,
           GameOptions options = {});
  static ReLaGame with_design(Dataset data, FunctionClass h_class, FunctionClass f_class,
                              DesignMatrix h_design, GameOptions options = {});

  const Dataset& data() const;
  const FunctionClass& h_class() const;
  const FunctionClass& f_class() const;
  const GameOptions& options() const;
  double alpha() const;
  bool ols_anchor() const;
  double f_ridge() const;  // resolved
  double lagrangian_weight() const { return weight_; }

  const DesignMatrix& h_design() const;
  const DesignMatrix& f_design() const;
  const GameMoments& moments() const;

  // Same data and classes, payoff = weight * L + alpha * R.
  ReLaGame penalized(double weight) const;

  // y_i - psi_i^T theta
  std::vector<double> residuals(const ParamFunction& h) const;
  std::vector<double> f_values(const ParamFunction& f) const;

  // Moment-form evaluation in O(d^2), used by the solver loop. `theta` and
  // `w` are h- and f-weights.
  Eigen::VectorXd best_response_weights(const Eigen::VectorXd& theta) const;
  // (G_f + ridge I)^-1 rbar over features used by some sample, 0 elsewhere;
  // throws NumericalError when singular.
  Eigen::MatrixXd solve_multiplier(const Eigen::MatrixXd& rbar) const;
  double payoff_moments(const Eigen::VectorXd& theta, const Eigen::VectorXd& w) const;
  Eigen::VectorXd grad_h_moments(const Eigen::VectorXd& theta, const Eigen::VectorXd& w) const;
  Eigen::VectorXd grad_f_moments(const Eigen::VectorXd& theta, const Eigen::VectorXd& w) const;

  // Curvature of the loss the h-player faces against best responses: the
  // largest eigenvalue of 2 s C^T (G_f + ridge)^-1 C + 2 alpha G_h.
  double h_curvature() const;
  // Largest eigenvalue of gram_f + ridge.
  double f_curvature() const;

  void check_h(const ParamFunction& h) const;
  void check_f(const ParamFunction& f) const;

 private:
  struct Shared;
  ReLaGame(std::shared_ptr<const Shared> shared, double weight)
      : shared_(std::move(shared)), weight_(weight) {}
  static std::shared_ptr<const Shared> build(Dataset data, FunctionClass h_class,
                                             FunctionClass f_class, DesignMatrix h_design,
                                             GameOptions options);

  std::shared_ptr<const Shared> shared_;
  double weight_ = 1.0;
};

double payoff(const ReLaGame& game, const ParamFunction& h, const ParamFunction& f);
Eigen::VectorXd grad_h(const ReLaGame& game, const ParamFunction& h, const ParamFunction& f);
Eigen::VectorXd grad_f(const ReLaGame& game, const ParamFunction& h, const ParamFunction& f);
// Contribution of sample i alone; sum_i w_i * grad_h_sample(i) = grad_h.
Eigen::VectorXd grad_h_sample(const ReLaGame& game, const ParamFunction& h,
                              const ParamFunction& f, std::size_t i);

// f-weights (G_f + ridge I)^-1 E[(y - psi^T theta) phi_f].
ParamFunction best_response_f(const ReLaGame& game, const ParamFunction& h);

struct IdentityCheck {
  double lhs = 0.0;  // payoff at the best response
  double rhs = 0.0;  // sum_z p(z) E[y - h | z]^2
};
// Exact when the multiplier class is tabular and f_ridge = 0.
IdentityCheck equilibrium_payoff_identity(const ReLaGame& game, const ParamFunction& h);

struct RegularizerValue {
  double value = 0.0;
  Eigen::VectorXd grad;
};
// R(h) = E[(h(x) - y)^2] and its weight gradient.
RegularizerValue ols_anchor_R(const Dataset& data, const ParamFunction& h);
// Same through the game's h-design.
RegularizerValue ols_anchor_R(const ReLaGame& game, const ParamFunction& h);

struct SlackEntry {
  int z_key = 0;
  std::size_t n_z = 0;
  double mass = 0.0;
  double f_value = 0.0;
  double residual_mean = 0.0;
};

struct SlackReport {
  std::vector<SlackEntry> entries;  // by n_z * f^2 descending, then z_key
  double aggregate = 0.0;           // sum_z mass_z * f_value^2
  std::size_t n = 0;
};

// Empty z groups are left out.
SlackReport slack_report(const ReLaGame& game, const ParamFunction& h, const ParamFunction& f);
void write_slack_csv(std::ostream& out, const SlackReport& report);
SlackReport read_slack_csv(std::istream& in);

}  // namespace cmm
