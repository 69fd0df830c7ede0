#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmm/dataset.hpp"
#include "cmm/function_classes.hpp"

namespace cmm {

// Z = z_scale * N(0,1), U = u_scale * N(0,1), independent;
// X = a Z + b U + x_noise * N(0,1);  Y = beta_star X + U.
struct LinearIVScenario {
  double beta_star = 2.0;
  double a = 1.0;  // instrument strength
  double b = 1.0;  // confounding
  double z_scale = 1.0;
  double u_scale = 1.0;
  double x_noise = 0.0;
  std::size_t n = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

Dataset generate_linear_iv(const LinearIVScenario& sc);

// Population limits under the scenario's Gaussian design.
double population_ols_slope(const LinearIVScenario& sc);
double population_tsls_slope(const LinearIVScenario& sc);

enum class HStarKind { kQuadratic, kPiecewiseLinear, kSigmoid };

// quadratic(qa, qb, qc): qa x^2 + qb x + qc
// piecewise-linear:      0.5 x for x < 0, 2 x for x >= 0
// sigmoid:               tanh(x)
struct HStar {
  HStarKind kind = HStarKind::kQuadratic;
  double qa = 1.0;
  double qb = 0.0;
  double qc = 0.0;

  static HStar quadratic(double qa, double qb, double qc);
  static HStar piecewise_linear();
  static HStar sigmoid();

  double operator()(double x) const;
  std::string_view name() const;
};

// As the linear scenario with Y = h_star(X) + U. With discrete_z = K the
// instrument is uniform over K centers spanning +-z_scale*sqrt(3) (unit
// variance when z_scale = 1) and z_key holds the bin. With discrete_x = M, X
// is snapped to the nearest of M evenly spaced points on [-x_range, x_range]
// before Y is formed.
struct NonlinearIVScenario {
  HStar h_star;
  double a = 1.0;
  double b = 1.0;
  double z_scale = 1.0;
  double u_scale = 1.0;
  double x_noise = 0.0;
  std::size_t n = 10000;
  std::uint64_t seed = 0;
  std::optional<int> discrete_z;
  std::optional<int> discrete_x;
  double x_range = 3.0;

  void validate() const;
};

Dataset generate_nonlinear_iv(const NonlinearIVScenario& sc);
// The K instrument centers of a discrete-z scenario.
std::vector<double> discrete_z_centers(int k, double z_scale);
std::vector<double> discrete_x_grid(int m, double x_range);

// Least squares on x-features: (E[phi phi^T] + ridge I)^-1 E[y phi].
ParamFunction ols_estimate(const Dataset& data, const FeatureMap& features, double ridge = 0.0);

// E[ZY] / E[ZX] for scalar x and z.
double tsls_estimate(const Dataset& data);

struct TslsFit {
  double beta = 0.0;
  double stderr_beta = 0.0;
  bool weak_instrument = false;  // |E[ZX]| < 0.05
};
TslsFit tsls_fit(const Dataset& data);

struct SlopeFit {
  double beta = 0.0;
  double stderr_beta = 0.0;
};
// No-intercept OLS slope of y on scalar x with its heteroskedasticity-robust
// standard error.
SlopeFit ols_slope_fit(const Dataset& data);

// Empirical P(x | z) over the distinct x values of a discrete dataset.
struct ConditionalTable {
  std::vector<double> x_values;            // sorted
  std::vector<std::vector<double>> prob;   // [z][j]
  std::vector<std::size_t> x_index;        // per sample
  int smoothed_rows = 0;                   // rows that got the Laplace pseudocount
};

ConditionalTable conditional_table(const Dataset& data);

struct TwoStageFit {
  ParamFunction h;
  int smoothed_rows = 0;
};

// argmin over the class of E[(y - E_{x ~ P(.|z)}[h(x)])^2] with P the table.
TwoStageFit discrete_two_stage_baseline(const Dataset& data, const FeatureMap& h_features,
                                        double radius = kDefaultRadius);

struct GradientEstimate {
  Eigen::VectorXd mean;
  Eigen::VectorXd stderr_mean;
};

struct BiasReport {
  std::size_t trials = 0;
  Eigen::VectorXd exact_two_stage;     // E[(y - E h)(-E phi)]
  GradientEstimate single_two_stage;   // one draw x ~ P(.|z_i): -(y - h(x)) phi(x)
  Eigen::VectorXd predicted_bias;      // sum_z p(z) Cov(h(X), phi(X) | z)
  Eigen::VectorXd exact_rela;          // grad_h at the best response
  GradientEstimate single_rela;        // one row i: -2 f(z_i) phi_h(x_i)
  int smoothed_rows = 0;
};

// Each trial draws one row i by weight and, for the two-stage form, one x from
// the table row of z_i. Requires discrete z and discrete x. The ReLa side
// plays h against the best response of a tabular multiplier over z.
BiasReport gradient_bias_experiment(const Dataset& data, const ParamFunction& h,
                                    std::size_t trials, std::uint64_t seed);
BiasReport gradient_bias_experiment(const NonlinearIVScenario& sc, const ParamFunction& h,
                                    std::size_t trials, std::uint64_t seed);

}  // namespace cmm
