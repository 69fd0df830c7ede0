#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "cmm/csv.hpp"
#include "cmm/dataset.hpp"
#include "cmm/error.hpp"
#include "cmm/ivr.hpp"
#include "cmm/rng.hpp"
#include "test_support.hpp"

using namespace cmm;

namespace {

SampleTriple row(double x, double y, int key) {
  return {{x}, y, {static_cast<double>(key)}, key};
}

Dataset keyed(const std::vector<int>& keys, int card, std::vector<double> ys = {}) {
  std::vector<SampleTriple> rows;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    rows.push_back(row(0.0, ys.empty() ? 0.0 : ys[i], keys[i]));
  }
  return Dataset(rows, card);
}

}  // namespace

TEST_CASE("dataset construction validates its invariants") {
  CHECK_THROWS_WITH_AS(Dataset({}), "empty dataset", ValidationError);
  CHECK_THROWS_AS(Dataset({row(0, 0, 0), {{1.0, 2.0}, 0.0, {0.0}, 0}}), ValidationError);
  CHECK_THROWS_AS(Dataset({row(0, 0, 3)}, 3), ValidationError);
  CHECK_THROWS_AS(Dataset({row(0, 0, 0)}, 0), ValidationError);
  CHECK_THROWS_AS(Dataset({row(0, 0, 0), row(1, 1, 0)}, 1, std::vector<double>{0.5, 0.4}),
                  ValidationError);
  CHECK_THROWS_AS(Dataset({row(0, 0, 0), row(1, 1, 0)}, 1, std::vector<double>{1.5, -0.5}),
                  ValidationError);
  SampleTriple no_key{{0.0}, 0.0, {0.0}, std::nullopt};
  CHECK_THROWS_AS(Dataset({no_key}, 2), ValidationError);
}

TEST_CASE("empirical_expectation worked examples") {
  const Dataset two = Dataset({row(0, 1, 0), row(0, 3, 0)});
  CHECK(empirical_expectation(two, [](const SampleTriple&) { return 1.0; }) == 1.0);
  CHECK(empirical_expectation(two, [](const SampleTriple& s) { return s.y; }) == 2.0);
  const Dataset weighted({row(0, 0, 0), row(0, 10, 0)}, std::nullopt, std::vector<double>{0.9, 0.1});
  CHECK(empirical_expectation(weighted, [](const SampleTriple& s) { return s.y; }) ==
        doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> short_values = {1.0};
  CHECK_THROWS_AS(empirical_expectation(two, short_values), ValidationError);
}

TEST_CASE("group_by_z worked examples") {
  auto g = group_by_z(keyed({0, 1, 0, 1}, 2));
  REQUIRE(g.size() == 2);
  CHECK(g[0].count == 2);
  CHECK(g[0].indices == std::vector<std::size_t>{0, 2});
  CHECK(g[1].indices == std::vector<std::size_t>{1, 3});

  g = group_by_z(keyed({0, 0, 0}, 2));
  CHECK(g[0].indices == std::vector<std::size_t>{0, 1, 2});
  CHECK(g[1].count == 0);
  CHECK(g[1].indices.empty());

  g = group_by_z(keyed({4}, 5));
  REQUIRE(g.size() == 5);
  for (int k = 0; k < 4; ++k) CHECK(g[k].count == 0);
  CHECK(g[4].indices == std::vector<std::size_t>{0});

  CHECK_THROWS_AS(group_by_z(Dataset({row(0, 0, 0)})), ValidationError);
}

TEST_CASE("property: empirical_expectation is linear") {
  RngHandle rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Dataset d = test::random_discrete_dataset(
        rng, {static_cast<int>(1 + rng.uniform_index(5)), 1 + rng.uniform_index(60), trial % 2 == 0});
    std::vector<double> g1(d.size()), g2(d.size()), mix(d.size());
    const double a = rng.normal(), b = rng.normal();
    for (std::size_t i = 0; i < d.size(); ++i) {
      g1[i] = rng.normal();
      g2[i] = 10 * rng.normal();
      mix[i] = a * g1[i] + b * g2[i];
    }
    const double lhs = empirical_expectation(d, mix);
    const double rhs = a * empirical_expectation(d, g1) + b * empirical_expectation(d, g2);
    CHECK(std::fabs(lhs - rhs) <= 1e-12 * (1 + std::fabs(a) + 10 * std::fabs(b)));
  }
}

TEST_CASE("property: per-group means recombine to the global mean") {
  RngHandle rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = static_cast<int>(1 + rng.uniform_index(6));
    const Dataset d = test::random_discrete_dataset(rng, {k, k + rng.uniform_index(50), trial % 2 == 1});
    // A z-measurable function: one random value per key.
    std::vector<double> by_key(static_cast<std::size_t>(k));
    for (auto& v : by_key) v = rng.normal();
    std::vector<double> g(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) g[i] = by_key[static_cast<std::size_t>(*d[i].z_key)];

    const auto groups = group_by_z(d);
    const auto means = conditional_means(d, g);
    double recombined = 0.0;
    for (std::size_t z = 0; z < groups.size(); ++z) recombined += groups[z].mass * means[z];
    CHECK(std::fabs(recombined - empirical_expectation(d, g)) <= 1e-12);

    std::size_t total = 0;
    for (const auto& grp : groups) total += grp.count;
    CHECK(total == d.size());
  }
}

TEST_CASE("rng streams are reproducible and independent") {
  RngHandle a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);
  RngHandle d1 = RngHandle(42).derive(1), d1b = RngHandle(42).derive(1), d2 = RngHandle(42).derive(2);
  const auto v = d1.next_u64();
  CHECK(v == d1b.next_u64());
  CHECK(v != d2.next_u64());
}

TEST_CASE("rng distributions have the right moments") {
  RngHandle rng(7);
  const int n = 200000;
  double s = 0, s2 = 0, u = 0;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
    u += rng.uniform();
    ++counts[rng.uniform_index(5)];
  }
  // 5 sigma bands.
  CHECK(std::fabs(s / n) < 5 / std::sqrt(n));
  CHECK(std::fabs(s2 / n - 1.0) < 5 * std::sqrt(2.0 / n));
  CHECK(std::fabs(u / n - 0.5) < 5 * std::sqrt(1.0 / 12 / n));
  for (int c : counts) CHECK(std::fabs(c - n / 5.0) < 5 * std::sqrt(n * 0.2 * 0.8));

  const std::vector<double> cum = {0.0, 0.25, 0.25, 1.0};
  std::vector<int> hits(4, 0);
  for (int i = 0; i < 40000; ++i) ++hits[rng.from_cumulative(cum)];
  CHECK(hits[0] == 0);
  CHECK(hits[2] == 0);
  CHECK(std::fabs(hits[1] - 10000) < 5 * std::sqrt(40000 * 0.25 * 0.75));
  CHECK_THROWS_AS(rng.uniform_index(0), ValidationError);
  CHECK_THROWS_AS(rng.from_cumulative(std::vector<double>{0.0, 0.0}), ValidationError);
}

TEST_CASE("same seed, same generator: bit-identical datasets") {
  LinearIVScenario sc;
  sc.n = 500;
  sc.seed = 99;
  const Dataset a = generate_linear_iv(sc), b = generate_linear_iv(sc);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].y == b[i].y);
    CHECK(a[i].z == b[i].z);
  }
}

TEST_CASE("format_double round-trips every double it prints") {
  RngHandle rng(5);
  for (int i = 0; i < 20000; ++i) {
    const std::uint64_t bits = rng.next_u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    if (!std::isfinite(v)) continue;
    CHECK(parse_double(format_double(v), "t") == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(2.0) == "2");
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
  CHECK(std::isnan(parse_double("nan", "t")));
  CHECK(parse_double("inf", "t") == std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(parse_double("1.5x", "t"), ValidationError);
  CHECK_THROWS_AS(parse_int("3.0", "t"), ValidationError);
  CHECK(parse_int("17", "t") == 17);
  CHECK(parse_int("-3", "t") == -3);
}

TEST_CASE("csv reader checks row widths") {
  std::istringstream ok("a,b\n1, 2\n\n3,4\n");
  const CsvTable t = read_csv(ok);
  CHECK(t.header == std::vector<std::string>{"a", "b"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "2");
  CHECK(t.column("b") == 1);
  CHECK_THROWS_AS(t.column("c"), ValidationError);
  std::istringstream bad("a,b\n1\n");
  CHECK_THROWS_AS(read_csv(bad), ValidationError);
}

TEST_CASE("property: dataset csv round trip is exact") {
  RngHandle rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const Dataset d = test::random_discrete_dataset(
        rng, {static_cast<int>(1 + rng.uniform_index(4)), 5 + rng.uniform_index(30),
              trial % 2 == 0, 1 + rng.uniform_index(2)});
    std::stringstream ss;
    write_dataset_csv(ss, d);
    const Dataset back = read_dataset_csv(ss, d.z_cardinality());
    REQUIRE(back.size() == d.size());
    CHECK(back.z_cardinality() == d.z_cardinality());
    CHECK(back.has_explicit_weights() == d.has_explicit_weights());
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(back[i].x == d[i].x);
      CHECK(back[i].y == d[i].y);
      CHECK(back[i].z == d[i].z);
      CHECK(back[i].z_key == d[i].z_key);
      CHECK(back.weights()[i] == d.weights()[i]);
    }
  }
}

TEST_CASE("dataset csv rejects malformed input") {
  std::istringstream empty("x_0,y,z_0\n");
  CHECK_THROWS_WITH_AS(read_dataset_csv(empty), "empty dataset", ValidationError);
  std::istringstream stray("x_0,y,q\n1,2,3\n");
  CHECK_THROWS_AS(read_dataset_csv(stray), ValidationError);
  std::istringstream no_y("x_0,z_0\n1,2\n");
  CHECK_THROWS_AS(read_dataset_csv(no_y), ValidationError);
  std::istringstream keyed("x_0,y,z_0,z_key\n1,2,0,0\n1,2,3,3\n");
  CHECK(read_dataset_csv(keyed).z_cardinality() == 4);
}
