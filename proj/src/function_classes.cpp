#include "cmm/function_classes.hpp"

#include <cmath>
#include <string>

#include "cmm/error.hpp"
#include "cmm/simd/kernels.hpp"

namespace cmm {
namespace {

// All exponent vectors of total degree <= degree, graded, and within one
// degree ordered so that earlier inputs carry the higher powers.
std::vector<std::vector<int>> monomial_exponents(int degree, int input_dim) {
  std::vector<std::vector<int>> out;
  std::vector<int> current(static_cast<std::size_t>(input_dim), 0);
  std::function<void(int, int)> fill = [&](int pos, int remaining) {
    if (pos == input_dim - 1) {
      current[static_cast<std::size_t>(pos)] = remaining;
      out.push_back(current);
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      current[static_cast<std::size_t>(pos)] = e;
      fill(pos + 1, remaining - e);
    }
  };
  for (int total = 0; total <= degree; ++total) fill(0, total);
  return out;
}

std::size_t tabular_index(double v, int cardinality) {
  if (!(v >= 0.0) || v >= cardinality || std::floor(v) != v) {
    throw ValidationError("tabular feature: index " + std::to_string(v) +
                          " is not an integer in [0, " + std::to_string(cardinality) + ")");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

Eigen::VectorXd DesignMatrix::row(std::size_t i) const {
  Eigen::VectorXd r(static_cast<Eigen::Index>(cols_));
  for (std::size_t j = 0; j < cols_; ++j) r[static_cast<Eigen::Index>(j)] = (*this)(i, j);
  return r;
}

std::vector<double> DesignMatrix::times(const Eigen::VectorXd& theta) const {
  if (static_cast<std::size_t>(theta.size()) != cols_) {
    throw ValidationError("design matrix: weight dimension mismatch");
  }
  std::vector<double> out(rows_, 0.0);
  for (std::size_t j = 0; j < cols_; ++j) {
    const double t = theta[static_cast<Eigen::Index>(j)];
    if (t != 0.0) simd::axpy(t, col(j), out);
  }
  return out;
}

FeatureMap FeatureMap::tabular(int cardinality) {
  if (cardinality < 1) throw ValidationError("tabular feature map: cardinality must be >= 1");
  return FeatureMap(Tabular{cardinality});
}

FeatureMap FeatureMap::polynomial(int degree, int input_dim) {
  if (degree < 0) throw ValidationError("polynomial feature map: degree must be >= 0");
  if (input_dim < 1) throw ValidationError("polynomial feature map: input_dim must be >= 1");
  Polynomial p;
  p.degree = degree;
  p.input_dim = input_dim;
  p.exponents = monomial_exponents(degree, input_dim);
  return FeatureMap(std::move(p));
}

FeatureMap FeatureMap::rbf(std::vector<std::vector<double>> centers, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ValidationError("rbf feature map: bandwidth must be > 0");
  if (centers.empty()) throw ValidationError("rbf feature map: needs at least one center");
  for (const auto& c : centers) {
    if (c.size() != centers.front().size() || c.empty()) {
      throw ValidationError("rbf feature map: centers must share a positive dimension");
    }
  }
  return FeatureMap(Rbf{std::move(centers), bandwidth});
}

FeatureMap FeatureMap::with_standardization(std::vector<double> shift,
                                            std::vector<double> scale) const {
  const auto* p = std::get_if<Polynomial>(&impl_);
  if (!p) throw ValidationError("standardization applies to polynomial maps only");
  const auto n = static_cast<std::size_t>(p->input_dim);
  if (shift.size() != n || scale.size() != n) {
    throw ValidationError("standardization: shift/scale length must equal input_dim");
  }
  for (double s : scale) {
    if (!(s > 0.0)) throw ValidationError("standardization: scale entries must be > 0");
  }
  Polynomial q = *p;
  q.shift = std::move(shift);
  q.scale = std::move(scale);
  return FeatureMap(std::move(q));
}

FeatureMap FeatureMap::standardized_on(const Dataset& data, InputSide side) const {
  const std::size_t n = input_dim();
  std::vector<double> shift(n), scale(n);
  std::vector<double> col(data.size());
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& v = side == InputSide::kX ? data[i].x : data[i].z;
      if (v.size() != n) throw ValidationError("standardized_on: input dimension mismatch");
      col[i] = v[k];
    }
    const double mean = empirical_expectation(data, col);
    std::vector<double> sq(col.size());
    for (std::size_t i = 0; i < col.size(); ++i) sq[i] = (col[i] - mean) * (col[i] - mean);
    const double sd = std::sqrt(empirical_expectation(data, sq));
    shift[k] = mean;
    scale[k] = sd > 0.0 ? sd : 1.0;
  }
  return with_standardization(std::move(shift), std::move(scale));
}

FeatureKind FeatureMap::kind() const {
  return static_cast<FeatureKind>(impl_.index());
}

std::size_t FeatureMap::output_dim() const {
  return std::visit(
      [](const auto& m) -> std::size_t {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Tabular>) {
          return static_cast<std::size_t>(m.cardinality);
        } else if constexpr (std::is_same_v<T, Polynomial>) {
          return m.exponents.size();
        } else {
          return m.centers.size() + 1;
        }
      },
      impl_);
}

std::size_t FeatureMap::input_dim() const {
  return std::visit(
      [](const auto& m) -> std::size_t {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Tabular>) {
          return 1;
        } else if constexpr (std::is_same_v<T, Polynomial>) {
          return static_cast<std::size_t>(m.input_dim);
        } else {
          return m.centers.front().size();
        }
      },
      impl_);
}

int FeatureMap::cardinality() const {
  const auto* t = std::get_if<Tabular>(&impl_);
  if (!t) throw ValidationError("feature map is not tabular");
  return t->cardinality;
}

int FeatureMap::degree() const {
  const auto* p = std::get_if<Polynomial>(&impl_);
  if (!p) throw ValidationError("feature map is not polynomial");
  return p->degree;
}

bool FeatureMap::is_standardized() const {
  const auto* p = std::get_if<Polynomial>(&impl_);
  return p && !p->shift.empty();
}

const std::vector<double>& FeatureMap::shift() const {
  return std::get<Polynomial>(impl_).shift;
}

const std::vector<double>& FeatureMap::scale() const {
  return std::get<Polynomial>(impl_).scale;
}

const std::vector<std::vector<int>>& FeatureMap::exponents() const {
  return std::get<Polynomial>(impl_).exponents;
}

const std::vector<std::vector<double>>& FeatureMap::centers() const {
  return std::get<Rbf>(impl_).centers;
}

double FeatureMap::bandwidth() const { return std::get<Rbf>(impl_).bandwidth; }

void FeatureMap::features(std::span<const double> input, std::span<double> out) const {
  if (input.size() != input_dim()) {
    throw ValidationError("feature map: input dimension " + std::to_string(input.size()) +
                          " != expected " + std::to_string(input_dim()));
  }
  if (out.size() != output_dim()) throw ValidationError("feature map: output buffer size");

  if (const auto* t = std::get_if<Tabular>(&impl_)) {
    std::fill(out.begin(), out.end(), 0.0);
    out[tabular_index(input[0], t->cardinality)] = 1.0;
  } else if (const auto* p = std::get_if<Polynomial>(&impl_)) {
    const std::size_t n = input.size();
    std::vector<double> u(input.begin(), input.end());
    if (!p->shift.empty()) {
      for (std::size_t k = 0; k < n; ++k) u[k] = (u[k] - p->shift[k]) / p->scale[k];
    }
    // powers[k][e] = u_k^e by repeated multiplication.
    std::vector<std::vector<double>> powers(n, std::vector<double>(
                                                   static_cast<std::size_t>(p->degree) + 1, 1.0));
    for (std::size_t k = 0; k < n; ++k) {
      for (int e = 1; e <= p->degree; ++e) {
        powers[k][static_cast<std::size_t>(e)] = powers[k][static_cast<std::size_t>(e) - 1] * u[k];
      }
    }
    for (std::size_t j = 0; j < p->exponents.size(); ++j) {
      double v = 1.0;
      for (std::size_t k = 0; k < n; ++k) {
        v *= powers[k][static_cast<std::size_t>(p->exponents[j][k])];
      }
      out[j] = v;
    }
  } else {
    const auto& r = std::get<Rbf>(impl_);
    out[0] = 1.0;
    const double denom = 2.0 * r.bandwidth * r.bandwidth;
    for (std::size_t c = 0; c < r.centers.size(); ++c) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < input.size(); ++k) {
        const double d = input[k] - r.centers[c][k];
        d2 += d * d;
      }
      out[c + 1] = std::exp(-d2 / denom);
    }
  }
}

Eigen::VectorXd FeatureMap::features(std::span<const double> input) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(output_dim()));
  features(input, std::span<double>(out.data(), output_dim()));
  return out;
}

std::vector<double> feature_input(const FeatureMap& features, const SampleTriple& s,
                                  InputSide side) {
  if (side == InputSide::kZ && features.kind() == FeatureKind::kTabular && s.z_key) {
    return {static_cast<double>(*s.z_key)};
  }
  return side == InputSide::kX ? s.x : s.z;
}

DesignMatrix FeatureMap::design(const Dataset& data, InputSide side) const {
  const std::size_t d = output_dim();
  DesignMatrix phi(data.size(), d);
  std::vector<double> row(d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    features(feature_input(*this, data[i], side), row);
    for (std::size_t j = 0; j < d; ++j) phi(i, j) = row[j];
  }
  return phi;
}

bool FeatureMap::operator==(const FeatureMap& other) const { return impl_ == other.impl_; }

ParamFunction ParamFunction::zero(FeatureMap features, double radius) {
  if (!(radius > 0.0)) throw ValidationError("radius must be > 0");
  const auto d = static_cast<Eigen::Index>(features.output_dim());
  return ParamFunction{std::move(features), Eigen::VectorXd::Zero(d), radius};
}

ParamFunction FunctionClass::with_weights(Eigen::VectorXd weights) const {
  if (static_cast<std::size_t>(weights.size()) != features.output_dim()) {
    throw ValidationError("weights length " + std::to_string(weights.size()) +
                          " != feature dimension " + std::to_string(features.output_dim()));
  }
  return ParamFunction{features, std::move(weights), radius};
}

double eval(const ParamFunction& fn, std::span<const double> input) {
  const Eigen::VectorXd phi = fn.features.features(input);
  if (phi.size() != fn.weights.size()) throw ValidationError("eval: weight dimension mismatch");
  return fn.weights.dot(phi);
}

Eigen::VectorXd grad_weights(const ParamFunction& fn, std::span<const double> input) {
  if (fn.features.output_dim() != static_cast<std::size_t>(fn.weights.size())) {
    throw ValidationError("grad_weights: weight dimension mismatch");
  }
  return fn.features.features(input);
}

ParamFunction project(ParamFunction fn) {
  if (!(fn.radius > 0.0)) throw ValidationError("project: radius must be > 0");
  const double norm = fn.weights.norm();
  if (norm <= fn.radius) return fn;
  fn.weights *= fn.radius / norm;
  // Rounding can leave the norm a hair above the radius; shrink until the
  // result is a fixed point so that project(project(f)) == project(f).
  while (fn.weights.norm() > fn.radius) fn.weights *= 1.0 - 0x1.0p-52;
  return fn;
}

GramCross gram_and_cross(std::span<const double> weights, const DesignMatrix& phi,
                         std::span<const double> residual) {
  if (phi.rows() == 0) throw ValidationError("empty dataset");
  if (weights.size() != phi.rows() || residual.size() != phi.rows()) {
    throw ValidationError("gram_and_cross: length mismatch");
  }
  const auto d = static_cast<Eigen::Index>(phi.cols());
  GramCross out{Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d)};
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto cj = phi.col(static_cast<std::size_t>(j));
    out.cross[j] = simd::weighted_dot(weights, residual, cj);
    for (Eigen::Index k = j; k < d; ++k) {
      const double g = simd::weighted_dot(weights, cj, phi.col(static_cast<std::size_t>(k)));
      out.gram(j, k) = g;
      out.gram(k, j) = g;
    }
  }
  return out;
}

GramCross gram_and_cross(const Dataset& data, const FeatureMap& features,
                         const std::function<double(const SampleTriple&)>& residual,
                         InputSide side) {
  const DesignMatrix phi = features.design(data, side);
  std::vector<double> r;
  r.reserve(data.size());
  for (const auto& s : data.samples()) r.push_back(residual(s));
  return gram_and_cross(data.weights(), phi, r);
}

std::vector<double> conditional_residual_means(const Dataset& data, const ParamFunction& h) {
  std::vector<double> r;
  r.reserve(data.size());
  for (const auto& s : data.samples()) r.push_back(s.y - eval(h, s.x));
  return conditional_means(data, r);
}

}  // namespace cmm
