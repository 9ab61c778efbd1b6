#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "oracles.hpp"
#include "trajmode/error.hpp"
#include "trajmode/stl.hpp"
#include "trajmode/tensor.hpp"

using namespace trajmode;

namespace {

Series noisy_sine(Eigen::Index n, double period, Rng& rng) {
  Series y(n);
  for (Eigen::Index v = 0; v < n; ++v)
    y[v] = std::sin(2 * std::numbers::pi * static_cast<double>(v) / period) + 0.3 * rng.normal();
  return y;
}

}  // namespace

TEST_CASE("loess matches weighted least squares normal equations") {
  Rng rng(3);
  for (int span : {3, 7, 11, 61}) {
    const Series y = noisy_sine(50, 9.0, rng);
    const Series s = loess_smooth(y, span);
    for (Eigen::Index i = 0; i < y.size(); ++i) CHECK(s[i] == doctest::Approx(testing::wls_loess_at(y, span, i)).epsilon(1e-9));
  }
}

TEST_CASE("loess reproduces a straight line") {
  Series y = Series::LinSpaced(30, -2.0, 5.0);
  const Series s = loess_smooth(y, 7);
  for (Eigen::Index i = 0; i < y.size(); ++i) CHECK(s[i] == doctest::Approx(y[i]).epsilon(1e-12));
}

TEST_CASE("moving average") {
  Series y(5);
  y << 1, 2, 3, 4, 5;
  const Series m = moving_average(y, 3);
  REQUIRE(m.size() == 3);
  CHECK(m[0] == doctest::Approx(2.0));
  CHECK(m[2] == doctest::Approx(4.0));
  CHECK_THROWS_AS(moving_average(y, 6), Error);
}

TEST_CASE("default spans follow the period rule") {
  const StlConfig d = StlConfig::for_period(24);
  CHECK(d == StlConfig{});
  const StlConfig p12 = StlConfig::for_period(12);
  CHECK(p12.trend_span == 23);
  CHECK(p12.lowpass_span == 13);
  CHECK_THROWS_AS(validate(StlConfig{1, 2, 7, 47, 25}), Error);
  CHECK_THROWS_AS(validate(StlConfig{24, 2, 8, 47, 25}), Error);
}

TEST_CASE("additive identity holds exactly on timestamp series") {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const int period = 2 + static_cast<int>(rng.below(20));
    const Eigen::Index n = 2 * period + static_cast<Eigen::Index>(rng.below(300));
    // Whole or quarter-second ticks with long gaps, the shape of relative GPS timestamps.
    const double tick = trial % 2 == 0 ? 1.0 : 0.25;
    Series y(n);
    double ts = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      y[i] = ts * tick;
      ts += rng.uniform() < 0.1 ? static_cast<double>(rng.below(600)) : 1.0 + static_cast<double>(rng.below(5000));
    }
    const StlDecomposition d = stl_decompose(y, StlConfig::for_period(period));
    const Series recomposed = (d.trend + d.seasonal) + d.residual;
    CHECK((recomposed.array() == y.array()).all());
  }
}

TEST_CASE("additive identity on real-valued series is within one rounding") {
  Rng rng(78);
  int exact = 0, total = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int period = 2 + static_cast<int>(rng.below(20));
    const Eigen::Index n = 2 * period + static_cast<Eigen::Index>(rng.below(200));
    Series y(n);
    const double scale = std::pow(10.0, rng.uniform(-3, 9));
    for (Eigen::Index i = 0; i < n; ++i) y[i] = scale * rng.normal() + static_cast<double>(i);
    const StlDecomposition d = stl_decompose(y, StlConfig::for_period(period));
    CHECK((d.residual.array() == (y - (d.trend + d.seasonal)).array()).all());
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sum = (d.trend[i] + d.seasonal[i]) + d.residual[i];
      const double big = std::max({std::abs(d.trend[i]), std::abs(d.seasonal[i]), std::abs(d.residual[i])});
      CHECK(std::abs(sum - y[i]) <= 4 * std::numeric_limits<double>::epsilon() * big);
      exact += sum == y[i];
      ++total;
    }
  }
  // Only cancelling components, where no binary64 residual can close the sum, miss.
  CHECK(exact > total * 8 / 10);
}

TEST_CASE("no binary64 residual closes a cancelling sum") {
  // y carries bits down to 2^-50 while trend + seasonal sits on a 2^-45 grid.
  const double y = 5.3806089276186215;
  const double a = -245.80711910744068;
  const double r = y - a;
  double lo = r, hi = r;
  for (int k = 0; k < 64; ++k) {
    CHECK(a + lo != y);
    CHECK(a + hi != y);
    lo = std::nextafter(lo, -1e300);
    hi = std::nextafter(hi, 1e300);
  }
}

TEST_CASE("seasonal recovers a planted sine") {
  const Eigen::Index n = 240;
  Series y(n), truth(n);
  for (Eigen::Index v = 0; v < n; ++v) {
    truth[v] = std::sin(2 * std::numbers::pi * static_cast<double>(v) / 12.0);
    y[v] = 0.01 * static_cast<double>(v) + truth[v];
  }
  const StlDecomposition d = stl_decompose(y, StlConfig::for_period(12));
  CHECK(testing::correlation(d.seasonal, truth) > 0.95);
  CHECK(testing::correlation(d.trend, Series::LinSpaced(n, 0.0, 0.01 * (n - 1))) > 0.99);
}

TEST_CASE("constant cadence has no seasonal component") {
  const Series y = Series::LinSpaced(120, 0.0, 595.0);
  const StlDecomposition d = stl_decompose(y, StlConfig::for_period(12));
  CHECK(d.seasonal.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("short series are rejected with the minimum length") {
  try {
    stl_decompose(Series::Zero(23), StlConfig::for_period(12));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Precondition);
    CHECK(std::string(e.what()).find("24") != std::string::npos);
  }
}

TEST_CASE("decomposition is deterministic") {
  Rng rng(8);
  const Series y = noisy_sine(100, 12, rng);
  const StlDecomposition a = stl_decompose(y, StlConfig::for_period(12));
  const StlDecomposition b = stl_decompose(y, StlConfig::for_period(12));
  CHECK((a.trend.array() == b.trend.array()).all());
  CHECK((a.seasonal.array() == b.seasonal.array()).all());
}

TEST_CASE("inject_period") {
  Trajectory t;
  t.traj_id = "x";
  double ts = 1e9;
  for (std::size_t i = 0; i < 60; ++i) {
    t.points.push_back({i, 40.0 + 1e-4 * static_cast<double>(i), 116.0, ts});
    ts += (i % 6 == 5) ? 9.0 : 1.0;
  }
  const StlConfig cfg = StlConfig::for_period(6);

  SUBCASE("adds the weighted seasonal component") {
    const Trajectory out = inject_period(t, cfg, InjectionConfig{0.5});
    const StlDecomposition d = stl_decompose(relative_timestamps(t), cfg);
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(out.points[i].ts == t.points[i].ts + 0.5 * d.seasonal[static_cast<Eigen::Index>(i)]);
      CHECK(out.points[i].lat == t.points[i].lat);
      CHECK(out.points[i].lon == t.points[i].lon);
    }
  }
  SUBCASE("zero weight and short trajectories pass through") {
    const Trajectory same = inject_period(t, cfg, InjectionConfig{0.0});
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(same.points[i].ts == t.points[i].ts);
    Trajectory shorter = t;
    shorter.points.resize(11);
    const Trajectory out = inject_period(shorter, cfg, InjectionConfig{1.0});
    for (std::size_t i = 0; i < shorter.size(); ++i) CHECK(out.points[i].ts == shorter.points[i].ts);
  }
  SUBCASE("negative weight is a config error") { CHECK_THROWS_AS(inject_period(t, cfg, InjectionConfig{-1.0}), Error); }
}
