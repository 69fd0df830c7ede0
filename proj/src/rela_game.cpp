#include "cmm/rela_game.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "cmm/csv.hpp"
#include "cmm/error.hpp"
#include "cmm/simd/kernels.hpp"

namespace cmm {

struct ReLaGame::Shared {
  Dataset data;
  FunctionClass h_class;
  FunctionClass f_class;
  GameOptions options;
  double ridge = 0.0;
  DesignMatrix psi;
  DesignMatrix phi;
  GameMoments m;
  // gram_f + ridge I restricted to features that are nonzero somewhere. An
  // unused feature (an empty z-group under a tabular class) gets weight 0.
  std::vector<Eigen::Index> active;
  Eigen::LDLT<Eigen::MatrixXd> a_factor;
  bool a_singular = false;
};

namespace {

Eigen::MatrixXd weighted_cross(std::span<const double> w, const DesignMatrix& a,
                               const DesignMatrix& b) {
  Eigen::MatrixXd out(a.cols(), b.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) {
    for (std::size_t k = 0; k < b.cols(); ++k) {
      out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) =
          simd::weighted_dot(w, a.col(j), b.col(k));
    }
  }
  return out;
}

Eigen::VectorXd weighted_proj(std::span<const double> w, const DesignMatrix& a,
                              std::span<const double> v) {
  Eigen::VectorXd out(a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) {
    out[static_cast<Eigen::Index>(j)] = simd::weighted_dot(w, a.col(j), v);
  }
  return out;
}

}  // namespace

std::shared_ptr<const ReLaGame::Shared> ReLaGame::build(Dataset data, FunctionClass h_class,
                                                        FunctionClass f_class,
                                                        DesignMatrix h_design,
                                                        GameOptions options) {
  if (!(options.alpha >= 0.0) || !std::isfinite(options.alpha)) {
    throw ValidationError("alpha must be a finite nonnegative number");
  }
  if (options.f_ridge && (!(*options.f_ridge >= 0.0) || !std::isfinite(*options.f_ridge))) {
    throw ValidationError("f_ridge must be a finite nonnegative number");
  }
  if (!(h_class.radius > 0.0) || !(f_class.radius > 0.0)) {
    throw ValidationError("class radius must be positive");
  }
  if (h_design.rows() != data.size() || h_design.cols() != h_class.features.output_dim()) {
    throw ValidationError("h design does not match dataset and hypothesis class");
  }
  auto s = std::make_shared<Shared>(Shared{std::move(data), std::move(h_class),
                                           std::move(f_class), options, 0.0,
                                           std::move(h_design), {}, {}, {}, {}, false});
  s->phi = s->f_class.features.design(s->data, InputSide::kZ);

  const auto w = s->data.weights();
  const auto y = s->data.y();
  s->m.gram_f = weighted_cross(w, s->phi, s->phi);
  s->m.cross_fh = weighted_cross(w, s->phi, s->psi);
  s->m.gram_h = weighted_cross(w, s->psi, s->psi);
  s->m.cross_fy = weighted_proj(w, s->phi, y);
  s->m.cross_hy = weighted_proj(w, s->psi, y);
  s->m.second_y = simd::weighted_dot(w, y, y);

  const auto df = s->m.gram_f.rows();
  s->ridge = options.f_ridge ? *options.f_ridge
                             : 1e-8 * s->m.gram_f.trace() / static_cast<double>(df);
  for (Eigen::Index j = 0; j < df; ++j) {
    if (s->m.gram_f(j, j) > 0.0) s->active.push_back(j);
  }
  const auto da = static_cast<Eigen::Index>(s->active.size());
  Eigen::MatrixXd a(da, da);
  for (Eigen::Index i = 0; i < da; ++i) {
    for (Eigen::Index j = 0; j < da; ++j) a(i, j) = s->m.gram_f(s->active[i], s->active[j]);
  }
  a.diagonal().array() += s->ridge;
  s->a_factor.compute(a);
  const Eigen::VectorXd d = da == 0 ? Eigen::VectorXd::Zero(1) : Eigen::VectorXd(s->a_factor.vectorD());
  const double dmax = d.cwiseAbs().maxCoeff();
  s->a_singular = da == 0 || s->a_factor.info() != Eigen::Success || !(dmax > 0.0) ||
                  d.minCoeff() <= 1e-13 * dmax;
  return s;
}

ReLaGame::ReLaGame(Dataset data, FunctionClass h_class, FunctionClass f_class,
                   GameOptions options) {
  DesignMatrix psi = h_class.features.design(data, InputSide::kX);
  shared_ = build(std::move(data), std::move(h_class), std::move(f_class), std::move(psi),
                  options);
}

ReLaGame ReLaGame::with_design(Dataset data, FunctionClass h_class, FunctionClass f_class,
                               DesignMatrix h_design, GameOptions options) {
  return ReLaGame(build(std::move(data), std::move(h_class), std::move(f_class),
                        std::move(h_design), options),
                  1.0);
}

const Dataset& ReLaGame::data() const { return shared_->data; }
const FunctionClass& ReLaGame::h_class() const { return shared_->h_class; }
const FunctionClass& ReLaGame::f_class() const { return shared_->f_class; }
const GameOptions& ReLaGame::options() const { return shared_->options; }
double ReLaGame::alpha() const { return shared_->options.alpha; }
bool ReLaGame::ols_anchor() const {
  return shared_->options.h_regularizer == HRegularizer::kOlsAnchor && shared_->options.alpha > 0.0;
}
double ReLaGame::f_ridge() const { return shared_->ridge; }
const DesignMatrix& ReLaGame::h_design() const { return shared_->psi; }
const DesignMatrix& ReLaGame::f_design() const { return shared_->phi; }
const GameMoments& ReLaGame::moments() const { return shared_->m; }

ReLaGame ReLaGame::penalized(double weight) const {
  if (!(weight >= 0.0) || !std::isfinite(weight)) {
    throw ValidationError("penalty weight must be a finite nonnegative number");
  }
  return ReLaGame(shared_, weight);
}

void ReLaGame::check_h(const ParamFunction& h) const {
  if (!(h.features == shared_->h_class.features)) {
    throw ValidationError("h is not drawn from the game's hypothesis class");
  }
  if (static_cast<std::size_t>(h.weights.size()) != h.features.output_dim()) {
    throw ValidationError("h weight length does not match its features");
  }
}

void ReLaGame::check_f(const ParamFunction& f) const {
  if (!(f.features == shared_->f_class.features)) {
    throw ValidationError("f is not drawn from the game's multiplier class");
  }
  if (static_cast<std::size_t>(f.weights.size()) != f.features.output_dim()) {
    throw ValidationError("f weight length does not match its features");
  }
}

std::vector<double> ReLaGame::residuals(const ParamFunction& h) const {
  check_h(h);
  std::vector<double> r = shared_->psi.times(h.weights);
  const auto y = shared_->data.y();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = y[i] - r[i];
  return r;
}

std::vector<double> ReLaGame::f_values(const ParamFunction& f) const {
  check_f(f);
  return shared_->phi.times(f.weights);
}

Eigen::MatrixXd ReLaGame::solve_multiplier(const Eigen::MatrixXd& rbar) const {
  if (shared_->a_singular) {
    throw NumericalError("f-class Gram singular; set f_ridge > 0");
  }
  const auto& act = shared_->active;
  Eigen::MatrixXd sub(static_cast<Eigen::Index>(act.size()), rbar.cols());
  for (std::size_t i = 0; i < act.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = rbar.row(act[i]);
  const Eigen::MatrixXd x = shared_->a_factor.solve(sub);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rbar.rows(), rbar.cols());
  for (std::size_t i = 0; i < act.size(); ++i) out.row(act[i]) = x.row(static_cast<Eigen::Index>(i));
  return out;
}

Eigen::VectorXd ReLaGame::best_response_weights(const Eigen::VectorXd& theta) const {
  return solve_multiplier(shared_->m.cross_fy - shared_->m.cross_fh * theta);
}

double ReLaGame::payoff_moments(const Eigen::VectorXd& theta, const Eigen::VectorXd& w) const {
  const auto& m = shared_->m;
  const Eigen::VectorXd rbar = m.cross_fy - m.cross_fh * theta;
  double value = weight_ * (2.0 * w.dot(rbar) - w.dot(m.gram_f * w));
  if (ols_anchor()) {
    const double r = theta.dot(m.gram_h * theta) - 2.0 * m.cross_hy.dot(theta) + m.second_y;
    value += alpha() * r;
  }
  return value;
}

Eigen::VectorXd ReLaGame::grad_h_moments(const Eigen::VectorXd& theta,
                                         const Eigen::VectorXd& w) const {
  const auto& m = shared_->m;
  Eigen::VectorXd g = -2.0 * weight_ * (m.cross_fh.transpose() * w);
  if (ols_anchor()) g += 2.0 * alpha() * (m.gram_h * theta - m.cross_hy);
  return g;
}

Eigen::VectorXd ReLaGame::grad_f_moments(const Eigen::VectorXd& theta,
                                         const Eigen::VectorXd& w) const {
  const auto& m = shared_->m;
  return 2.0 * weight_ * ((m.cross_fy - m.cross_fh * theta) - m.gram_f * w);
}

double ReLaGame::h_curvature() const {
  const auto& m = shared_->m;
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(m.gram_h.rows(), m.gram_h.cols());
  if (weight_ > 0.0) {
    const Eigen::MatrixXd x = solve_multiplier(m.cross_fh);
    hess += 2.0 * weight_ * (m.cross_fh.transpose() * x);
  }
  if (ols_anchor()) hess += 2.0 * alpha() * m.gram_h;
  hess = 0.5 * (hess + hess.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess, Eigen::EigenvaluesOnly);
  return std::max(0.0, es.eigenvalues().maxCoeff());
}

double ReLaGame::f_curvature() const {
  const auto df = shared_->m.gram_f.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      shared_->m.gram_f + shared_->ridge * Eigen::MatrixXd::Identity(df, df),
      Eigen::EigenvaluesOnly);
  return std::max(0.0, es.eigenvalues().maxCoeff());
}

double payoff(const ReLaGame& game, const ParamFunction& h, const ParamFunction& f) {
  const auto r = game.residuals(h);
  const auto fv = game.f_values(f);
  const auto w = game.data().weights();
  double value = game.lagrangian_weight() *
                 (2.0 * simd::weighted_dot(w, r, fv) - simd::weighted_dot(w, fv, fv));
  if (game.ols_anchor()) value += game.alpha() * simd::weighted_dot(w, r, r);
  return value;
}

Eigen::VectorXd grad_h(const ReLaGame& game, const ParamFunction& h, const ParamFunction& f) {
  const auto r = game.residuals(h);
  const auto fv = game.f_values(f);
  const auto w = game.data().weights();
  const auto& psi = game.h_design();
  const double s = game.lagrangian_weight();
  const bool anchor = game.ols_anchor();
  Eigen::VectorXd g(static_cast<Eigen::Index>(psi.cols()));
  for (std::size_t j = 0; j < psi.cols(); ++j) {
    double v = -2.0 * s * simd::weighted_dot(w, fv, psi.col(j));
    if (anchor) v -= 2.0 * game.alpha() * simd::weighted_dot(w, r, psi.col(j));
    g[static_cast<Eigen::Index>(j)] = v;
  }
  return g;
}

Eigen::VectorXd grad_f(const ReLaGame& game, const ParamFunction& h, const ParamFunction& f) {
  const auto r = game.residuals(h);
  const auto fv = game.f_values(f);
  std::vector<double> diff(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) diff[i] = r[i] - fv[i];
  const auto w = game.data().weights();
  const auto& phi = game.f_design();
  Eigen::VectorXd g(static_cast<Eigen::Index>(phi.cols()));
  for (std::size_t j = 0; j < phi.cols(); ++j) {
    g[static_cast<Eigen::Index>(j)] =
        2.0 * game.lagrangian_weight() * simd::weighted_dot(w, diff, phi.col(j));
  }
  return g;
}

Eigen::VectorXd grad_h_sample(const ReLaGame& game, const ParamFunction& h,
                              const ParamFunction& f, std::size_t i) {
  game.check_h(h);
  game.check_f(f);
  if (i >= game.data().size()) throw ValidationError("sample index out of range");
  const Eigen::VectorXd psi = game.h_design().row(i);
  const Eigen::VectorXd phi = game.f_design().row(i);
  const double fz = f.weights.dot(phi);
  Eigen::VectorXd g = -2.0 * game.lagrangian_weight() * fz * psi;
  if (game.ols_anchor()) {
    const double r = game.data().y()[i] - h.weights.dot(psi);
    g -= 2.0 * game.alpha() * r * psi;
  }
  return g;
}

ParamFunction best_response_f(const ReLaGame& game, const ParamFunction& h) {
  const auto r = game.residuals(h);
  const auto w = game.data().weights();
  const auto& phi = game.f_design();
  Eigen::VectorXd rbar(static_cast<Eigen::Index>(phi.cols()));
  for (std::size_t j = 0; j < phi.cols(); ++j) {
    rbar[static_cast<Eigen::Index>(j)] = simd::weighted_dot(w, r, phi.col(j));
  }
  return game.f_class().with_weights(game.solve_multiplier(rbar));
}

IdentityCheck equilibrium_payoff_identity(const ReLaGame& game, const ParamFunction& h) {
  if (game.f_class().features.kind() != FeatureKind::kTabular) {
    throw ValidationError("identity requires tabular multiplier class");
  }
  if (!game.data().discrete_z()) throw ValidationError("dataset not discrete in z");
  const ParamFunction f = best_response_f(game, h);
  IdentityCheck out;
  out.lhs = payoff(game, h, f);

  const auto r = game.residuals(h);
  const auto means = conditional_means(game.data(), r);
  const auto groups = group_by_z(game.data());
  std::vector<double> terms(groups.size());
  for (std::size_t z = 0; z < groups.size(); ++z) terms[z] = groups[z].mass * means[z] * means[z];
  out.rhs = game.lagrangian_weight() * simd::sum(terms);
  if (game.ols_anchor()) {
    const auto w = game.data().weights();
    out.rhs += game.alpha() * simd::weighted_dot(w, r, r);
  }
  return out;
}

RegularizerValue ols_anchor_R(const Dataset& data, const ParamFunction& h) {
  const DesignMatrix psi = h.features.design(data, InputSide::kX);
  const auto pred = psi.times(h.weights);
  const auto y = data.y();
  std::vector<double> e(pred.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = pred[i] - y[i];
  const auto w = data.weights();
  RegularizerValue out;
  out.value = simd::weighted_dot(w, e, e);
  out.grad.resize(static_cast<Eigen::Index>(psi.cols()));
  for (std::size_t j = 0; j < psi.cols(); ++j) {
    out.grad[static_cast<Eigen::Index>(j)] = 2.0 * simd::weighted_dot(w, e, psi.col(j));
  }
  return out;
}

RegularizerValue ols_anchor_R(const ReLaGame& game, const ParamFunction& h) {
  const auto r = game.residuals(h);
  const auto w = game.data().weights();
  const auto& psi = game.h_design();
  RegularizerValue out;
  out.value = simd::weighted_dot(w, r, r);
  out.grad.resize(static_cast<Eigen::Index>(psi.cols()));
  for (std::size_t j = 0; j < psi.cols(); ++j) {
    out.grad[static_cast<Eigen::Index>(j)] = -2.0 * simd::weighted_dot(w, r, psi.col(j));
  }
  return out;
}

SlackReport slack_report(const ReLaGame& game, const ParamFunction& h, const ParamFunction& f) {
  const Dataset& data = game.data();
  if (!data.discrete_z()) throw ValidationError("dataset not discrete in z");
  const auto r = game.residuals(h);
  const auto fv = game.f_values(f);
  const auto means = conditional_means(data, r);
  const auto groups = group_by_z(data);

  SlackReport out;
  out.n = data.size();
  std::vector<double> terms;
  for (std::size_t z = 0; z < groups.size(); ++z) {
    const auto& g = groups[z];
    if (g.count == 0) continue;
    SlackEntry e;
    e.z_key = static_cast<int>(z);
    e.n_z = g.count;
    e.mass = g.mass;
    e.f_value = fv[g.indices.front()];
    e.residual_mean = means[z];
    terms.push_back(e.mass * e.f_value * e.f_value);
    out.entries.push_back(e);
  }
  out.aggregate = simd::sum(terms);
  std::stable_sort(out.entries.begin(), out.entries.end(),
                   [](const SlackEntry& a, const SlackEntry& b) {
                     const double ka = static_cast<double>(a.n_z) * a.f_value * a.f_value;
                     const double kb = static_cast<double>(b.n_z) * b.f_value * b.f_value;
                     if (ka != kb) return ka > kb;
                     return a.z_key < b.z_key;
                   });
  return out;
}

void write_slack_csv(std::ostream& out, const SlackReport& report) {
  out << "z_key,n_z,f_value,residual_mean\n";
  for (const auto& e : report.entries) {
    out << e.z_key << ',' << e.n_z << ',' << format_double(e.f_value) << ','
        << format_double(e.residual_mean) << '\n';
  }
  out << "aggregate," << report.n << ',' << format_double(report.aggregate) << ",\n";
}

SlackReport read_slack_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  const auto ck = t.column("z_key");
  const auto cn = t.column("n_z");
  const auto cf = t.column("f_value");
  const auto cr = t.column("residual_mean");
  SlackReport out;
  bool have_aggregate = false;
  for (const auto& row : t.rows) {
    if (row[ck] == "aggregate") {
      out.n = static_cast<std::size_t>(parse_int(row[cn], "slack csv"));
      out.aggregate = parse_double(row[cf], "slack csv");
      have_aggregate = true;
      continue;
    }
    SlackEntry e;
    e.z_key = static_cast<int>(parse_int(row[ck], "slack csv"));
    e.n_z = static_cast<std::size_t>(parse_int(row[cn], "slack csv"));
    e.f_value = parse_double(row[cf], "slack csv");
    e.residual_mean = parse_double(row[cr], "slack csv");
    out.entries.push_back(e);
  }
  if (!have_aggregate) throw ValidationError("slack csv: missing aggregate row");
  if (out.n > 0) {
    for (auto& e : out.entries) e.mass = static_cast<double>(e.n_z) / static_cast<double>(out.n);
  }
  return out;
}

}  // namespace cmm
