#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "cmm/error.hpp"
#include "cmm/function_classes.hpp"
#include "cmm/serialization.hpp"
#include "test_support.hpp"

using namespace cmm;

namespace {

double at(const ParamFunction& fn, double x) {
  const double in[1] = {x};
  return eval(fn, in);
}

ParamFunction with(FeatureMap fm, std::vector<double> w, double radius = kDefaultRadius) {
  ParamFunction fn = ParamFunction::zero(std::move(fm), radius);
  fn.weights = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  return fn;
}

std::uint64_t bits(double v) {
  std::uint64_t b;
  std::memcpy(&b, &v, sizeof b);
  return b;
}

}  // namespace

TEST_CASE("eval worked examples") {
  CHECK(at(with(FeatureMap::tabular(3), {5, 6, 7}), 1.0) == 6.0);
  CHECK(at(with(FeatureMap::polynomial(2), {1, 2, 3}), 2.0) == 17.0);
  CHECK(at(ParamFunction::zero(FeatureMap::polynomial(3)), 1.7) == 0.0);
  CHECK(at(ParamFunction::zero(FeatureMap::rbf({{0.0}}, 1.0)), 0.3) == 0.0);
  CHECK_THROWS_AS(at(with(FeatureMap::tabular(3), {1, 2, 3}), 3.0), ValidationError);
  CHECK_THROWS_AS(at(with(FeatureMap::tabular(3), {1, 2, 3}), 0.5), ValidationError);
}

TEST_CASE("grad_weights worked examples") {
  const double z0[1] = {0.0};
  const Eigen::VectorXd g = grad_weights(ParamFunction::zero(FeatureMap::tabular(2)), z0);
  CHECK(g == Eigen::Vector2d(1, 0));
  const double x3[1] = {3.0};
  CHECK(grad_weights(ParamFunction::zero(FeatureMap::polynomial(2)), x3) == Eigen::Vector3d(1, 3, 9));
  const double c[1] = {0.8};
  const Eigen::VectorXd r = grad_weights(ParamFunction::zero(FeatureMap::rbf({{0.8}}, 0.37)), c);
  CHECK(r == Eigen::Vector2d(1, 1));
}

TEST_CASE("project worked examples") {
  CHECK(project(with(FeatureMap::polynomial(1), {3, 4}, 10)).weights == Eigen::Vector2d(3, 4));
  CHECK(project(with(FeatureMap::polynomial(1), {3, 4}, 5)).weights == Eigen::Vector2d(3, 4));
  const Eigen::VectorXd p = project(with(FeatureMap::polynomial(1), {6, 8}, 5)).weights;
  CHECK(p[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("gram_and_cross worked examples") {
  std::vector<SampleTriple> rows = {{{0.0}, 1.0, {0.0}, 0}, {{0.0}, 3.0, {1.0}, 1}};
  const Dataset d(rows, 2);
  auto zero = [](const SampleTriple&) { return 0.0; };
  auto gc = gram_and_cross(d, FeatureMap::tabular(2), zero, InputSide::kZ);
  CHECK(gc.gram.isApprox(Eigen::Matrix2d{{0.5, 0.0}, {0.0, 0.5}}));
  CHECK(gc.cross.isZero());

  rows[1].z_key = 0;
  rows[1].z = {0.0};
  const Dataset one(rows, 1);
  gc = gram_and_cross(one, FeatureMap::tabular(1), [](const SampleTriple& s) { return s.y; },
                      InputSide::kZ);
  CHECK(gc.gram(0, 0) == 1.0);
  CHECK(gc.cross[0] == 2.0);
}

TEST_CASE("conditional_residual_means worked examples") {
  std::vector<SampleTriple> rows = {{{0.0}, 1.0, {0.0}, 0}, {{0.0}, 3.0, {0.0}, 0}};
  const ParamFunction h0 = ParamFunction::zero(FeatureMap::polynomial(1));
  CHECK(conditional_residual_means(Dataset(rows, 1), h0) == std::vector<double>{2.0});

  rows = {{{0.0}, -1.0, {0.0}, 0}, {{0.0}, 1.0, {0.0}, 0}, {{0.0}, 4.0, {1.0}, 1}};
  CHECK(conditional_residual_means(Dataset(rows, 2), h0) == std::vector<double>{0.0, 4.0});

  // h equal to the data-generating function gives zero residual means.
  rows = {{{1.0}, 3.0, {0.0}, 0}, {{2.0}, 5.0, {1.0}, 1}, {{-1.0}, -1.0, {1.0}, 1}};
  const auto m = conditional_residual_means(Dataset(rows, 2), with(FeatureMap::polynomial(1), {1, 2}));
  CHECK(m == std::vector<double>{0.0, 0.0});
}

TEST_CASE("polynomial maps enumerate graded monomials") {
  const FeatureMap p = FeatureMap::polynomial(3, 2);
  CHECK(p.output_dim() == 10);
  const auto& ex = p.exponents();
  REQUIRE(ex.size() == 10);
  CHECK(ex[0] == std::vector<int>{0, 0});
  int prev = 0;
  for (const auto& e : ex) {
    const int deg = e[0] + e[1];
    CHECK(deg >= prev);
    prev = deg;
  }
  const double in[2] = {1.5, -0.5};
  const Eigen::VectorXd f = p.features(in);
  for (std::size_t k = 0; k < ex.size(); ++k) {
    CHECK(f[static_cast<Eigen::Index>(k)] ==
          doctest::Approx(std::pow(1.5, ex[k][0]) * std::pow(-0.5, ex[k][1])));
  }
  const FeatureMap s = FeatureMap::polynomial(2).with_standardization({1.0}, {2.0});
  const double x[1] = {5.0};
  CHECK(s.features(x) == Eigen::Vector3d(1, 2, 4));
  CHECK_THROWS_AS(FeatureMap::tabular(2).with_standardization({0.0}, {1.0}), ValidationError);
  CHECK_THROWS_AS(FeatureMap::polynomial(1).with_standardization({0.0}, {0.0}), ValidationError);
}

TEST_CASE("feature map constructors validate") {
  CHECK_THROWS_AS(FeatureMap::tabular(0), ValidationError);
  CHECK_THROWS_AS(FeatureMap::polynomial(-1), ValidationError);
  CHECK_THROWS_AS(FeatureMap::rbf({}, 1.0), ValidationError);
  CHECK_THROWS_AS(FeatureMap::rbf({{0.0}}, 0.0), ValidationError);
  CHECK_THROWS_AS(FeatureMap::rbf({{0.0}, {0.0, 1.0}}, 1.0), ValidationError);
  CHECK_THROWS_AS(ParamFunction::zero(FeatureMap::polynomial(1), 0.0), ValidationError);
}

TEST_CASE("property: grad_weights matches central differences of eval") {
  RngHandle rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const FeatureMap fm = test::random_x_features(rng);
    ParamFunction fn = ParamFunction::zero(fm);
    fn.weights = test::random_vector(rng, static_cast<Eigen::Index>(fm.output_dim()));
    const double x[1] = {test::uniform_in(rng, -2.0, 2.0)};
    const Eigen::VectorXd fd = test::central_diff(
        [&](const Eigen::VectorXd& w) {
          ParamFunction g = fn;
          g.weights = w;
          return eval(g, x);
        },
        fn.weights, 1e-4);
    CHECK(test::rel_inf_error(fd, grad_weights(fn, x), 1e-3) <= 1e-6);
  }
}

TEST_CASE("property: negating the weights negates the function exactly") {
  RngHandle rng(22);
  for (int trial = 0; trial < 500; ++trial) {
    const FeatureMap fm = trial % 3 == 0 ? FeatureMap::tabular(5) : test::random_x_features(rng);
    ParamFunction fn = ParamFunction::zero(fm);
    fn.weights = test::random_vector(rng, static_cast<Eigen::Index>(fm.output_dim()), 3.0);
    ParamFunction neg = fn;
    neg.weights = -fn.weights;
    const double x[1] = {fm.kind() == FeatureKind::kTabular
                             ? static_cast<double>(rng.uniform_index(5))
                             : test::uniform_in(rng, -3.0, 3.0)};
    CHECK(bits(eval(neg, x)) == bits(-eval(fn, x)));
  }
}

TEST_CASE("property: Gram matrices are PSD up to roundoff") {
  RngHandle rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const Dataset d = test::random_discrete_dataset(
        rng, {static_cast<int>(1 + rng.uniform_index(5)), 1 + rng.uniform_index(40), trial % 2 == 0});
    const FeatureMap fm = test::random_x_features(rng);
    const auto gc = gram_and_cross(d, fm, [](const SampleTriple& s) { return s.y; }, InputSide::kX);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gc.gram);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
    // Same moments as a plain weighted sum over eval'd features.
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(gc.gram.rows(), gc.gram.cols());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const Eigen::VectorXd phi = fm.features(d[i].x);
      g += d.weights()[i] * phi * phi.transpose();
    }
    CHECK((g - gc.gram).cwiseAbs().maxCoeff() <= 1e-12 * (1 + g.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("property: project is idempotent bit for bit and lands in the ball") {
  RngHandle rng(24);
  for (int trial = 0; trial < 1000; ++trial) {
    const double radius = test::uniform_in(rng, 0.01, 10.0);
    ParamFunction fn = ParamFunction::zero(FeatureMap::polynomial(3), radius);
    fn.weights = test::random_vector(rng, 4, test::uniform_in(rng, 0.01, 20.0));
    const ParamFunction once = project(fn);
    const ParamFunction twice = project(once);
    for (Eigen::Index k = 0; k < 4; ++k) CHECK(bits(once.weights[k]) == bits(twice.weights[k]));
    CHECK(once.weights.norm() <= radius * (1 + 1e-15));
    if (fn.weights.norm() <= radius) CHECK(once.weights == fn.weights);
  }
}

TEST_CASE("standardized_on centres and scales the inputs") {
  RngHandle rng(25);
  const Dataset d = test::random_discrete_dataset(rng, {3, 500, true});
  const FeatureMap s = FeatureMap::polynomial(1).standardized_on(d, InputSide::kX);
  CHECK(s.is_standardized());
  long double m = 0, v = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double u = s.features(d[i].x)[1];
    m += d.weights()[i] * u;
    v += d.weights()[i] * u * u;
  }
  CHECK(std::fabs(static_cast<double>(m)) < 1e-12);
  CHECK(static_cast<double>(v) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("design matrix rows match per-sample features") {
  RngHandle rng(26);
  const Dataset d = test::random_discrete_dataset(rng, {4, 30});
  const DesignMatrix x = FeatureMap::polynomial(2).design(d, InputSide::kX);
  const DesignMatrix z = FeatureMap::tabular(4).design(d, InputSide::kZ);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(x.row(i) == FeatureMap::polynomial(2).features(d[i].x));
    CHECK(z(i, static_cast<std::size_t>(*d[i].z_key)) == 1.0);
    CHECK(z.row(i).sum() == 1.0);
  }
  Eigen::VectorXd theta(3);
  theta << 1, -2, 0.5;
  const auto prod = x.times(theta);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(prod[i] == doctest::Approx(x.row(i).dot(theta)));
}

TEST_CASE("feature maps and functions survive serialization") {
  RngHandle rng(27);
  for (int trial = 0; trial < 50; ++trial) {
    FeatureMap fm = trial % 4 == 0 ? FeatureMap::tabular(1 + static_cast<int>(rng.uniform_index(9)))
                                   : test::random_x_features(rng);
    if (fm.kind() == FeatureKind::kPolynomial && trial % 2 == 0) {
      fm = fm.with_standardization({rng.normal()}, {test::uniform_in(rng, 0.5, 2.0)});
    }
    CHECK(feature_map_from_json(to_json(fm)) == fm);
    ParamFunction fn = ParamFunction::zero(fm, test::uniform_in(rng, 1.0, 100.0));
    fn.weights = test::random_vector(rng, static_cast<Eigen::Index>(fm.output_dim()));
    const ParamFunction back = param_function_from_json(Json::parse(to_json(fn).dump()));
    CHECK(back.features == fn.features);
    CHECK(back.weights == fn.weights);
    CHECK(back.radius == fn.radius);
  }
  Json bad = to_json(FeatureMap::polynomial(2));
  bad["colour"] = "blue";
  CHECK_THROWS_WITH_AS(feature_map_from_json(bad, "h"), "h.colour: unknown field", ValidationError);
}
