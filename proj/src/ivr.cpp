#include "cmm/ivr.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cmm/error.hpp"
#include "cmm/rela_game.hpp"
#include "cmm/rng.hpp"
#include "cmm/simd/kernels.hpp"

namespace cmm {

namespace {

void check_common(double a, double z_scale, double u_scale, double x_noise, std::size_t n) {
  if (!std::isfinite(a) || a == 0.0) {
    throw ValidationError("scenario.a must be nonzero (instrument relevance)");
  }
  if (!(z_scale > 0.0) || !std::isfinite(z_scale)) {
    throw ValidationError("scenario.z_scale must be positive");
  }
  if (!(u_scale >= 0.0) || !std::isfinite(u_scale)) {
    throw ValidationError("scenario.u_scale must be nonnegative");
  }
  if (!(x_noise >= 0.0) || !std::isfinite(x_noise)) {
    throw ValidationError("scenario.x_noise must be nonnegative");
  }
  if (n < 1) throw ValidationError("scenario.n must be >= 1");
}

bool is_singular(const Eigen::LDLT<Eigen::MatrixXd>& ldlt) {
  const Eigen::VectorXd d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  return ldlt.info() != Eigen::Success || !(dmax > 0.0) || d.minCoeff() <= 1e-12 * dmax;
}

void require_scalar(const Dataset& data, const char* who) {
  if (data.dx() != 1 || data.dz() != 1) {
    throw ValidationError(std::string(who) + ": requires scalar x and z");
  }
}

}  // namespace

void LinearIVScenario::validate() const {
  if (!std::isfinite(beta_star) || !std::isfinite(b)) {
    throw ValidationError("scenario coefficients must be finite");
  }
  check_common(a, z_scale, u_scale, x_noise, n);
}

Dataset generate_linear_iv(const LinearIVScenario& sc) {
  sc.validate();
  RngHandle rng(sc.seed);
  std::vector<SampleTriple> samples;
  samples.reserve(sc.n);
  for (std::size_t i = 0; i < sc.n; ++i) {
    const double z = sc.z_scale * rng.normal();
    const double u = sc.u_scale * rng.normal();
    const double e = rng.normal();
    const double x = sc.a * z + sc.b * u + sc.x_noise * e;
    samples.push_back({{x}, sc.beta_star * x + u, {z}, std::nullopt});
  }
  return Dataset(std::move(samples));
}

double population_ols_slope(const LinearIVScenario& sc) {
  const double vz = sc.z_scale * sc.z_scale;
  const double vu = sc.u_scale * sc.u_scale;
  const double vx = sc.a * sc.a * vz + sc.b * sc.b * vu + sc.x_noise * sc.x_noise;
  return sc.beta_star + sc.b * vu / vx;
}

double population_tsls_slope(const LinearIVScenario& sc) { return sc.beta_star; }

HStar HStar::quadratic(double qa, double qb, double qc) {
  return HStar{HStarKind::kQuadratic, qa, qb, qc};
}
HStar HStar::piecewise_linear() { return HStar{HStarKind::kPiecewiseLinear, 0, 0, 0}; }
HStar HStar::sigmoid() { return HStar{HStarKind::kSigmoid, 0, 0, 0}; }

double HStar::operator()(double x) const {
  switch (kind) {
    case HStarKind::kQuadratic: return qa * x * x + qb * x + qc;
    case HStarKind::kPiecewiseLinear: return x < 0.0 ? 0.5 * x : 2.0 * x;
    case HStarKind::kSigmoid: return std::tanh(x);
  }
  return 0.0;
}

std::string_view HStar::name() const {
  switch (kind) {
    case HStarKind::kQuadratic: return "quadratic";
    case HStarKind::kPiecewiseLinear: return "piecewise-linear";
    case HStarKind::kSigmoid: return "sigmoid";
  }
  return "?";
}

void NonlinearIVScenario::validate() const {
  if (!std::isfinite(b) || !std::isfinite(h_star.qa) || !std::isfinite(h_star.qb) ||
      !std::isfinite(h_star.qc)) {
    throw ValidationError("scenario coefficients must be finite");
  }
  check_common(a, z_scale, u_scale, x_noise, n);
  if (discrete_z && *discrete_z < 1) throw ValidationError("scenario.discrete_z must be >= 1");
  if (discrete_x && *discrete_x < 1) throw ValidationError("scenario.discrete_x must be >= 1");
  if (!(x_range > 0.0) || !std::isfinite(x_range)) {
    throw ValidationError("scenario.x_range must be positive");
  }
}

std::vector<double> discrete_z_centers(int k, double z_scale) {
  std::vector<double> c(static_cast<std::size_t>(k));
  const double half = z_scale * std::sqrt(3.0);
  for (int j = 0; j < k; ++j) c[static_cast<std::size_t>(j)] = half * (-1.0 + (2.0 * j + 1.0) / k);
  return c;
}

std::vector<double> discrete_x_grid(int m, double x_range) {
  std::vector<double> g(static_cast<std::size_t>(m), 0.0);
  if (m == 1) return g;
  for (int j = 0; j < m; ++j) {
    g[static_cast<std::size_t>(j)] = x_range * (-1.0 + 2.0 * j / (m - 1));
  }
  return g;
}

Dataset generate_nonlinear_iv(const NonlinearIVScenario& sc) {
  sc.validate();
  RngHandle rng(sc.seed);
  std::vector<double> zc, xg;
  if (sc.discrete_z) zc = discrete_z_centers(*sc.discrete_z, sc.z_scale);
  if (sc.discrete_x) xg = discrete_x_grid(*sc.discrete_x, sc.x_range);

  std::vector<SampleTriple> samples;
  samples.reserve(sc.n);
  for (std::size_t i = 0; i < sc.n; ++i) {
    double z;
    std::optional<int> key;
    if (sc.discrete_z) {
      const auto k = rng.uniform_index(zc.size());
      z = zc[k];
      key = static_cast<int>(k);
    } else {
      z = sc.z_scale * rng.normal();
    }
    const double u = sc.u_scale * rng.normal();
    const double e = rng.normal();
    double x = sc.a * z + sc.b * u + sc.x_noise * e;
    if (sc.discrete_x) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < xg.size(); ++j) {
        if (std::abs(x - xg[j]) < std::abs(x - xg[best])) best = j;
      }
      x = xg[best];
    }
    samples.push_back({{x}, sc.h_star(x) + u, {z}, key});
  }
  return Dataset(std::move(samples), sc.discrete_z);
}

ParamFunction ols_estimate(const Dataset& data, const FeatureMap& features, double ridge) {
  if (!(ridge >= 0.0)) throw ValidationError("ols ridge must be nonnegative");
  const DesignMatrix phi = features.design(data, InputSide::kX);
  const GramCross gc = gram_and_cross(data.weights(), phi, data.y());
  const auto d = gc.gram.rows();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gc.gram + ridge * Eigen::MatrixXd::Identity(d, d));
  if (is_singular(ldlt)) throw NumericalError("ols: singular Gram; set a ridge");
  return ParamFunction{features, ldlt.solve(gc.cross), kDefaultRadius};
}

double tsls_estimate(const Dataset& data) { return tsls_fit(data).beta; }

TslsFit tsls_fit(const Dataset& data) {
  require_scalar(data, "tsls");
  const std::size_t n = data.size();
  std::vector<double> x(n), z(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = data[i].x[0];
    z[i] = data[i].z[0];
  }
  const auto w = data.weights();
  const auto y = data.y();
  const double ezx = simd::weighted_dot(w, z, x);
  if (!(std::abs(ezx) >= 1e-12)) throw NumericalError("weak/irrelevant instrument");
  TslsFit out;
  out.beta = simd::weighted_dot(w, z, y) / ezx;
  out.weak_instrument = std::abs(ezx) < 0.05;
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - out.beta * x[i];
    s[i] = w[i] * w[i] * z[i] * z[i] * e * e;
  }
  out.stderr_beta = std::sqrt(simd::sum(s)) / std::abs(ezx);
  return out;
}

SlopeFit ols_slope_fit(const Dataset& data) {
  if (data.dx() != 1) throw ValidationError("ols slope: requires scalar x");
  const std::size_t n = data.size();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = data[i].x[0];
  const auto w = data.weights();
  const auto y = data.y();
  const double exx = simd::weighted_dot(w, x, x);
  if (!(exx > 0.0)) throw NumericalError("ols: zero-variance x");
  SlopeFit out;
  out.beta = simd::weighted_dot(w, x, y) / exx;
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - out.beta * x[i];
    s[i] = w[i] * w[i] * x[i] * x[i] * e * e;
  }
  out.stderr_beta = std::sqrt(simd::sum(s)) / exx;
  return out;
}

ConditionalTable conditional_table(const Dataset& data) {
  if (!data.discrete_z()) throw ValidationError("dataset not discrete in z");
  if (data.dx() != 1) throw ValidationError("conditional table: requires scalar x");
  ConditionalTable t;
  std::map<double, std::size_t> index;
  for (const auto& s : data.samples()) index.emplace(s.x[0], 0);
  std::size_t j = 0;
  for (auto& [v, k] : index) {
    k = j++;
    t.x_values.push_back(v);
  }
  const auto m = t.x_values.size();
  const auto K = static_cast<std::size_t>(*data.z_cardinality());
  std::vector<std::vector<double>> counts(K, std::vector<double>(m, 0.0));
  const auto w = data.weights();
  t.x_index.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    t.x_index[i] = index.at(s.x[0]);
    counts[static_cast<std::size_t>(*s.z_key)][t.x_index[i]] += w[i];
  }
  // Pseudocount of one sample's weight; uniform weights make this a count of 1.
  const double unit = 1.0 / static_cast<double>(data.size());
  t.prob.assign(K, std::vector<double>(m, 0.0));
  for (std::size_t z = 0; z < K; ++z) {
    auto& row = counts[z];
    if (std::any_of(row.begin(), row.end(), [](double c) { return c == 0.0; })) {
      for (double& c : row) c += unit;
      ++t.smoothed_rows;
    }
    const double total = simd::sum(row);
    for (std::size_t k = 0; k < m; ++k) t.prob[z][k] = row[k] / total;
  }
  return t;
}

namespace {

// E_{x ~ P(.|z)}[phi(x)] per z.
std::vector<Eigen::VectorXd> conditional_features(const ConditionalTable& t,
                                                  const FeatureMap& features) {
  std::vector<Eigen::VectorXd> feats;
  for (double v : t.x_values) feats.push_back(features.features(std::span<const double>(&v, 1)));
  std::vector<Eigen::VectorXd> out;
  for (const auto& row : t.prob) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(features.output_dim()));
    for (std::size_t k = 0; k < row.size(); ++k) mu += row[k] * feats[k];
    out.push_back(std::move(mu));
  }
  return out;
}

}  // namespace

TwoStageFit discrete_two_stage_baseline(const Dataset& data, const FeatureMap& h_features,
                                        double radius) {
  const ConditionalTable t = conditional_table(data);
  const auto mu = conditional_features(t, h_features);
  DesignMatrix bar(data.size(), h_features.output_dim());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& m = mu[static_cast<std::size_t>(*data[i].z_key)];
    for (std::size_t j = 0; j < bar.cols(); ++j) bar(i, j) = m[static_cast<Eigen::Index>(j)];
  }
  const GramCross gc = gram_and_cross(data.weights(), bar, data.y());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gc.gram);
  if (is_singular(ldlt)) {
    throw NumericalError("two-stage normal equations singular: class not identified by z");
  }
  TwoStageFit out;
  out.h = project(ParamFunction{h_features, ldlt.solve(gc.cross), radius});
  out.smoothed_rows = t.smoothed_rows;
  return out;
}

namespace {

GradientEstimate summarize(const std::vector<Eigen::VectorXd>& draws) {
  const auto d = draws.front().size();
  const auto n = static_cast<double>(draws.size());
  GradientEstimate out{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
  for (const auto& g : draws) out.mean += g;
  out.mean /= n;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (const auto& g : draws) var += (g - out.mean).cwiseAbs2();
  var /= (n - 1.0);
  out.stderr_mean = (var / n).cwiseSqrt();
  return out;
}

}  // namespace

BiasReport gradient_bias_experiment(const Dataset& data, const ParamFunction& h,
                                    std::size_t trials, std::uint64_t seed) {
  if (trials < 100) throw ValidationError("insufficient trials");
  const ConditionalTable t = conditional_table(data);
  const FeatureMap& feats = h.features;
  const auto mu = conditional_features(t, feats);
  const auto K = t.prob.size();
  const auto d = static_cast<Eigen::Index>(feats.output_dim());

  std::vector<Eigen::VectorXd> phi_at;
  std::vector<double> h_at;
  for (double v : t.x_values) {
    const std::span<const double> in(&v, 1);
    phi_at.push_back(feats.features(in));
    h_at.push_back(eval(h, in));
  }
  std::vector<double> mh(K, 0.0);
  std::vector<Eigen::VectorXd> cov(K, Eigen::VectorXd::Zero(d));
  for (std::size_t z = 0; z < K; ++z) {
    for (std::size_t k = 0; k < t.x_values.size(); ++k) mh[z] += t.prob[z][k] * h_at[k];
    for (std::size_t k = 0; k < t.x_values.size(); ++k) {
      cov[z] += t.prob[z][k] * (h_at[k] - mh[z]) * (phi_at[k] - mu[z]);
    }
  }

  BiasReport out;
  out.trials = trials;
  out.smoothed_rows = t.smoothed_rows;
  const auto w = data.weights();
  const auto y = data.y();
  out.exact_two_stage = Eigen::VectorXd::Zero(d);
  out.predicted_bias = Eigen::VectorXd::Zero(d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto z = static_cast<std::size_t>(*data[i].z_key);
    out.exact_two_stage += w[i] * (-(y[i] - mh[z]) * mu[z]);
    out.predicted_bias += w[i] * cov[z];
  }

  ReLaGame game(data, FunctionClass{feats, h.radius},
                FunctionClass{FeatureMap::tabular(static_cast<int>(K)), kDefaultRadius});
  const ParamFunction f = best_response_f(game, h);
  out.exact_rela = grad_h(game, h, f);

  std::vector<double> cum_w(data.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) cum_w[i] = acc += w[i];
  std::vector<std::vector<double>> cum_x(K);
  for (std::size_t z = 0; z < K; ++z) {
    acc = 0.0;
    for (double p : t.prob[z]) cum_x[z].push_back(acc += p);
  }

  RngHandle two_stage_rng = RngHandle(seed).derive(1);
  RngHandle rela_rng = RngHandle(seed).derive(2);
  std::vector<Eigen::VectorXd> ts, rl;
  ts.reserve(trials);
  rl.reserve(trials);
  for (std::size_t k = 0; k < trials; ++k) {
    const std::size_t i = two_stage_rng.from_cumulative(cum_w);
    const auto z = static_cast<std::size_t>(*data[i].z_key);
    const std::size_t j = two_stage_rng.from_cumulative(cum_x[z]);
    ts.push_back(-(y[i] - h_at[j]) * phi_at[j]);

    const std::size_t r = rela_rng.from_cumulative(cum_w);
    rl.push_back(grad_h_sample(game, h, f, r));
  }
  out.single_two_stage = summarize(ts);
  out.single_rela = summarize(rl);
  return out;
}

BiasReport gradient_bias_experiment(const NonlinearIVScenario& sc, const ParamFunction& h,
                                    std::size_t trials, std::uint64_t seed) {
  if (trials < 100) throw ValidationError("insufficient trials");
  if (!sc.discrete_z || !sc.discrete_x) {
    throw ValidationError("bias experiment requires discrete_z and discrete_x");
  }
  return gradient_bias_experiment(generate_nonlinear_iv(sc), h, trials, seed);
}

}  // namespace cmm
