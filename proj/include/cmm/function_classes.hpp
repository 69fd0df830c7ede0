#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "cmm/dataset.hpp"

namespace cmm {

inline constexpr double kDefaultRadius = 1e6;

enum class InputSide { kX, kZ };

// Column-major N x d matrix of per-sample features.
class DesignMatrix {
 public:
  DesignMatrix() = default;
  DesignMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  std::span<const double> col(std::size_t j) const {
    return {data_.data() + j * rows_, rows_};
  }
  std::span<double> col(std::size_t j) { return {data_.data() + j * rows_, rows_}; }

  double operator()(std::size_t i, std::size_t j) const { return data_[j * rows_ + i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[j * rows_ + i]; }

  Eigen::VectorXd row(std::size_t i) const;
  // Phi * theta as a length-N vector.
  std::vector<double> times(const Eigen::VectorXd& theta) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class FeatureKind { kTabular, kPolynomial, kRbf };

// A fixed feature map phi. Every function class in the library is the linear
// span of one of these, so evaluation and gradients are linear in the weights.
//
//   tabular(K):       one-hot of an integer index in [0, K); the input is a
//                     length-1 vector holding the index (z_key on the z side of
//                     a discrete dataset).
//   polynomial(d, n): all monomials of total degree <= d in n inputs, graded
//                     order starting with the constant (1, x, x^2, ... for n=1).
//                     Optional per-input standardization u = (x - shift)/scale.
//   rbf(C, bw):       1 followed by exp(-|x - c|^2 / (2 bw^2)) for each center.
class FeatureMap {
 public:
  // Placeholder: tabular over a single bin.
  FeatureMap() : impl_(Tabular{1}) {}

  static FeatureMap tabular(int cardinality);
  static FeatureMap polynomial(int degree, int input_dim = 1);
  static FeatureMap rbf(std::vector<std::vector<double>> centers, double bandwidth);

  // Polynomial maps only.
  FeatureMap with_standardization(std::vector<double> shift,
                                  std::vector<double> scale) const;
  // Shift/scale fitted to the (weighted) mean and std of the chosen inputs.
  FeatureMap standardized_on(const Dataset& data, InputSide side) const;

  FeatureKind kind() const;
  std::size_t output_dim() const;
  std::size_t input_dim() const;

  int cardinality() const;   // tabular
  int degree() const;        // polynomial
  bool is_standardized() const;
  const std::vector<double>& shift() const;
  const std::vector<double>& scale() const;
  const std::vector<std::vector<int>>& exponents() const;
  const std::vector<std::vector<double>>& centers() const;  // rbf
  double bandwidth() const;

  void features(std::span<const double> input, std::span<double> out) const;
  Eigen::VectorXd features(std::span<const double> input) const;

  // Feature rows for every sample, reading x or z. Tabular maps on the z side
  // of a discrete dataset read z_key.
  DesignMatrix design(const Dataset& data, InputSide side) const;

  bool operator==(const FeatureMap& other) const;

 private:
  struct Tabular {
    int cardinality = 0;
    bool operator==(const Tabular&) const = default;
  };
  struct Polynomial {
    int degree = 0;
    int input_dim = 1;
    std::vector<std::vector<int>> exponents;
    std::vector<double> shift;
    std::vector<double> scale;
    bool operator==(const Polynomial&) const = default;
  };
  struct Rbf {
    std::vector<std::vector<double>> centers;
    double bandwidth = 1.0;
    bool operator==(const Rbf&) const = default;
  };

  explicit FeatureMap(std::variant<Tabular, Polynomial, Rbf> impl) : impl_(std::move(impl)) {}

  std::variant<Tabular, Polynomial, Rbf> impl_;
};

// The input a feature map sees for one sample.
std::vector<double> feature_input(const FeatureMap& features, const SampleTriple& s,
                                  InputSide side);

// h or f: weights over a feature map, confined to an l2 ball of `radius`.
struct ParamFunction {
  FeatureMap features;
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(1);
  double radius = kDefaultRadius;

  static ParamFunction zero(FeatureMap features, double radius = kDefaultRadius);
};

// A feature map together with its projection radius: the class H or F.
struct FunctionClass {
  FeatureMap features;
  double radius = kDefaultRadius;

  ParamFunction zero() const { return ParamFunction::zero(features, radius); }
  ParamFunction with_weights(Eigen::VectorXd weights) const;
};

double eval(const ParamFunction& fn, std::span<const double> input);
Eigen::VectorXd grad_weights(const ParamFunction& fn, std::span<const double> input);
// Scales weights by min(1, radius / |weights|_2). Idempotent bit-for-bit.
ParamFunction project(ParamFunction fn);

struct GramCross {
  Eigen::MatrixXd gram;   // E[phi phi^T]
  Eigen::VectorXd cross;  // E[r phi]
};

GramCross gram_and_cross(const Dataset& data, const FeatureMap& features,
                         const std::function<double(const SampleTriple&)>& residual,
                         InputSide side);
// Same, from a design matrix and per-sample residuals.
GramCross gram_and_cross(std::span<const double> weights, const DesignMatrix& phi,
                         std::span<const double> residual);

// Per-z mean of y - h(x); groups with no samples map to 0.
std::vector<double> conditional_residual_means(const Dataset& data, const ParamFunction& h);

}  // namespace cmm
