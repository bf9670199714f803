#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "evtrisk/error.hpp"
#include "evtrisk/smoothing.hpp"
#include "oracles/numeric.hpp"

using namespace evtrisk;

namespace {

ReturnSeries series_of(std::vector<double> v) { return ReturnSeries{std::move(v), ReturnKind::raw, {}}; }

}  // namespace

TEST_CASE("Epanechnikov kernel values") {
  CHECK(epanechnikov(0.0).weight == 0.75);
  CHECK(epanechnikov(0.0).integrated == 0.5);
  CHECK(epanechnikov(1.0).weight == 0.0);
  CHECK(epanechnikov(1.0).integrated == 1.0);
  CHECK(epanechnikov(-1.5).integrated == 0.0);
  CHECK(epanechnikov(0.5).weight == doctest::Approx(0.5625).epsilon(1e-15));
  CHECK(epanechnikov(0.5).integrated == doctest::Approx(0.84375).epsilon(1e-15));
}

TEST_CASE("Gaussian kernel values") {
  CHECK(gaussian(0.0).weight == doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)));
  CHECK(gaussian(0.0).integrated == doctest::Approx(0.5));
  CHECK(gaussian(1.959963984540054).integrated == doctest::Approx(0.975).epsilon(1e-12));
}

TEST_CASE("integrated kernels are the antiderivatives of the weights") {
  for (const Kernel& k : {Kernel::epanechnikov(), Kernel::gaussian()}) {
    for (double u = -1.2; u <= 1.2; u += 0.1) {
      const double direct = oracle::integrate(k.weight, std::isfinite(k.radius) ? -k.radius : -8.0, u, 1e-13);
      CHECK(std::abs(direct - k.integrated(u)) < 1e-10);
    }
  }
}

TEST_CASE("local linear reproduces lines exactly") {
  Eigen::MatrixXd x(12, 1);
  Eigen::VectorXd y(12);
  for (int i = 0; i < 12; ++i) {
    x(i, 0) = 0.3 * i - 1.0;
    y[i] = 2.0 + 3.0 * x(i, 0);
  }
  for (double h : {0.7, 2.0, 50.0}) {
    const auto e = local_linear(Eigen::VectorXd::Constant(1, 0.4), x, y, h);
    CHECK(e.level == doctest::Approx(3.2).epsilon(1e-12));
    CHECK(e.slope[0] == doctest::Approx(3.0).epsilon(1e-12));
  }
}

TEST_CASE("huge bandwidth gives global least squares") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  const int n = 40;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = nd(gen);
    y[i] = 1.0 - 0.5 * x(i, 0) + 0.2 * x(i, 0) * x(i, 0) + 0.1 * nd(gen);
  }
  Eigen::MatrixXd design(n, 2);
  design.col(0).setOnes();
  design.col(1) = x.col(0);
  const Eigen::Vector2d ols = design.colPivHouseholderQr().solve(y);
  const auto e = local_linear(Eigen::VectorXd::Zero(1), x, y, 1e7);
  CHECK(e.level == doctest::Approx(ols[0]).epsilon(1e-9));
  CHECK(e.slope[0] == doctest::Approx(ols[1]).epsilon(1e-9));
}

TEST_CASE("seven-point fixture matches the normal-equation oracle") {
  const std::vector<double> xs{-1.1, -0.6, -0.2, 0.05, 0.4, 0.9, 1.3};
  const std::vector<double> ys{0.3, -0.2, 0.8, 1.1, 0.7, 1.9, 2.4};
  Eigen::MatrixXd x(7, 1);
  Eigen::VectorXd y(7);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 7; ++i) {
    x(i, 0) = xs[i];
    y[i] = ys[i];
    rows.push_back({xs[i]});
  }
  for (double q : {-0.5, 0.0, 0.3, 0.8}) {
    const auto e = local_linear(Eigen::VectorXd::Constant(1, q), x, y, 0.8);
    const auto o = oracle::local_linear({q}, rows, ys, 0.8);
    CHECK(std::abs(e.level - o[0]) < 1e-10);
    CHECK(std::abs(e.slope[0] - o[1]) < 1e-10);
  }
}

TEST_CASE("bivariate fixtures match the normal-equation oracle") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd;
  for (int fixture = 0; fixture < 5; ++fixture) {
    const int n = 80;
    Eigen::MatrixXd x(n, 2);
    Eigen::VectorXd y(n);
    std::vector<std::vector<double>> rows;
    std::vector<double> ys;
    for (int i = 0; i < n; ++i) {
      x(i, 0) = nd(gen);
      x(i, 1) = nd(gen);
      y[i] = std::sin(x(i, 0)) + x(i, 1) * x(i, 1) + 0.3 * nd(gen);
      rows.push_back({x(i, 0), x(i, 1)});
      ys.push_back(y[i]);
    }
    const Eigen::Vector2d q(0.2 * fixture - 0.4, 0.1);
    const auto e = local_linear(q, x, y, 1.5);
    const auto o = oracle::local_linear({q[0], q[1]}, rows, ys, 1.5);
    CHECK(std::abs(e.level - o[0]) < 1e-10);
    CHECK(std::abs(e.slope[0] - o[1]) < 1e-10);
    CHECK(std::abs(e.slope[1] - o[2]) < 1e-10);
  }
}

TEST_CASE("degenerate local design names the query") {
  Eigen::MatrixXd x(5, 1);
  x << 0.0, 0.0, 0.0, 5.0, 6.0;
  Eigen::VectorXd y(5);
  y << 1, 2, 3, 4, 5;
  try {
    local_linear(Eigen::VectorXd::Constant(1, 0.0), x, y, 0.5);
    FAIL("expected a degenerate fit");
  } catch (const DegenerateFitError& e) {
    CHECK(std::string(e.what()).find("degenerate at") != std::string::npos);
  }
}

TEST_CASE("sorted smoother agrees with the direct estimator") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  const int n = 300;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = nd(gen);
    y[i] = x(i, 0) * x(i, 0) + nd(gen);
  }
  LocalLinearSmoother s(x, y, 0.6);
  for (double q = -1.5; q <= 1.5; q += 0.25) {
    const Eigen::VectorXd v = Eigen::VectorXd::Constant(1, q);
    CHECK(std::abs(s.estimate(v).level - local_linear(v, x, y, 0.6).level) < 1e-12);
  }
}

TEST_CASE("adaptive estimate widens only isolated points") {
  Eigen::MatrixXd x(30, 1);
  Eigen::VectorXd y(30);
  for (int i = 0; i < 29; ++i) {
    x(i, 0) = 0.1 * i;
    y[i] = 0.1 * i;
  }
  x(29, 0) = 20.0;
  y[29] = 20.0;
  LocalLinearSmoother s(x, y, 0.5);
  bool widened = false;
  s.estimate_adaptive(Eigen::VectorXd::Constant(1, 1.0), &widened);
  CHECK_FALSE(widened);
  const auto e = s.estimate_adaptive(Eigen::VectorXd::Constant(1, 20.0), &widened);
  CHECK(widened);
  CHECK(e.level == doctest::Approx(20.0).epsilon(1e-9));
  CHECK_THROWS_AS(s.estimate(Eigen::VectorXd::Constant(1, 20.0)), DegenerateFitError);
}

TEST_CASE("regression bandwidth branches") {
  std::vector<double> x(200), lin(200), sq(200);
  for (int i = 0; i < 200; ++i) {
    x[i] = i / 199.0;
    lin[i] = 1.0 + 2.0 * x[i];
    sq[i] = x[i] * x[i];
  }
  const BandwidthChoice l = rot_bandwidth_regression(x, lin);
  CHECK(l.rule == BandwidthChoice::Rule::linear_fallback);
  CHECK(l.h == doctest::Approx(0.5));
  const BandwidthChoice q = rot_bandwidth_regression(x, sq);
  CHECK(q.rule == BandwidthChoice::Rule::floored);
  CHECK(q.h == doctest::Approx(1e-3));
  std::vector<double> flat(20, 1.0), y(20, 0.0);
  CHECK_THROWS_AS(rot_bandwidth_regression(flat, y), InputError);
}

TEST_CASE("regression bandwidth matches the formula oracle") {
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(-2.0, 2.0);
  std::vector<double> x(500), y(500);
  for (int i = 0; i < 500; ++i) {
    x[i] = ud(gen);
    y[i] = 1.5 * x[i] * x[i] - x[i] + nd(gen);
  }
  const BandwidthChoice b = rot_bandwidth_regression(x, y);
  CHECK(b.rule == BandwidthChoice::Rule::plug_in);
  CHECK(std::abs(b.h / oracle::rsw_bandwidth(x, y) - 1.0) < 1e-12);
}

TEST_CASE("regression bandwidth scales with x") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> nd;
  std::vector<double> x(400), y(400), xs(400), ys(400);
  for (int i = 0; i < 400; ++i) {
    x[i] = nd(gen);
    y[i] = std::sin(2.0 * x[i]) + 0.5 * nd(gen);
    xs[i] = 0.01 * x[i];
    ys[i] = 0.01 * y[i];
  }
  CHECK(rot_bandwidth_regression(xs, ys).h == doctest::Approx(0.01 * rot_bandwidth_regression(x, y).h).epsilon(1e-9));
}

TEST_CASE("density bandwidth") {
  std::vector<double> unit_iqr{0.0, 0.0, 1.0, 1.0, 0.5};
  // Type-7 quartiles of (0,0,0.5,1,1) are 0 and 1.
  CHECK(interquartile_range(unit_iqr) == doctest::Approx(1.0));
  CHECK(rot_bandwidth_density(unit_iqr, 1000) == doctest::Approx(0.212631).epsilon(1e-6));
  std::vector<double> same(10, 2.0);
  CHECK_THROWS_AS(rot_bandwidth_density(same, 1000), InputError);
  std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK(interquartile_range(x) == doctest::Approx(4.0));
}

TEST_CASE("first stage on IID unit-variance data") {
  std::mt19937_64 gen(17);
  std::normal_distribution<double> nd;
  std::vector<double> v(2001);
  for (double& e : v) e = nd(gen);
  const LocationScaleFit fit = fit_location_scale(series_of(v));
  const auto& r = fit.residuals();
  REQUIRE(r.size() == 2000);
  double mean = 0.0, var = 0.0;
  for (double e : r) mean += e;
  mean /= static_cast<double>(r.size());
  for (double e : r) var += (e - mean) * (e - mean);
  var /= static_cast<double>(r.size());
  CHECK(std::abs(mean) < 0.1);
  CHECK(std::abs(var - 1.0) < 0.15);
  CHECK(fit.h1() > 0.0);
  CHECK(fit.h2() > 0.0);
  CHECK(fit.last_state()[0] == v.back());
}

TEST_CASE("constant series gives zero residuals") {
  const LocationScaleFit fit = fit_location_scale(series_of(std::vector<double>(200, 0.7)));
  for (std::size_t t = 0; t < fit.size(); ++t) {
    CHECK(fit.location()[t] == doctest::Approx(0.7));
    CHECK(fit.variance()[t] == 0.0);
    CHECK(fit.residuals()[t] == 0.0);
  }
  CHECK_FALSE(fit.warnings().empty());
}

TEST_CASE("residuals vanish wherever the variance estimate is not positive") {
  std::mt19937_64 gen(4);
  std::student_t_distribution<double> td(3.0);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> v(600);
    double prev = 0.0;
    for (double& y : v) {
      y = 0.3 * prev + std::sqrt(0.5 + 0.4 * prev * prev) * td(gen) * 0.1;
      prev = y;
    }
    const LocationScaleFit fit = fit_location_scale(series_of(v));
    for (std::size_t t = 0; t < fit.size(); ++t) {
      if (fit.variance()[t] <= kScaleFloor) CHECK(fit.residuals()[t] == 0.0);
      else CHECK(fit.residuals()[t] == doctest::Approx((fit.y()[t] - fit.location()[t]) / std::sqrt(fit.variance()[t])));
    }
  }
}

TEST_CASE("residuals are invariant under rescaling the series") {
  std::mt19937_64 gen(99);
  std::normal_distribution<double> nd;
  std::vector<double> v(800), w(800);
  double prev = 0.0;
  for (std::size_t t = 0; t < v.size(); ++t) {
    v[t] = std::sin(0.5 * prev) + std::sqrt(1.0 + 0.3 * prev * prev) * nd(gen);
    prev = v[t];
    w[t] = 250.0 * v[t];
  }
  const LocationScaleFit a = fit_location_scale(series_of(v));
  const LocationScaleFit b = fit_location_scale(series_of(w));
  CHECK(b.h1() == doctest::Approx(250.0 * a.h1()).epsilon(1e-8));
  for (std::size_t t = 0; t < a.size(); ++t) CHECK(std::abs(a.residuals()[t] - b.residuals()[t]) < 1e-7);
  CHECK(b.m_hat(250.0 * 0.3) == doctest::Approx(250.0 * a.m_hat(0.3)).epsilon(1e-8));
  CHECK(b.h_hat(250.0 * 0.3) == doctest::Approx(62500.0 * a.h_hat(0.3)).epsilon(1e-8));
}

TEST_CASE("first stage preconditions") {
  CHECK_THROWS_AS(fit_location_scale(series_of(std::vector<double>(15, 1.0))), InputError);
  std::vector<double> v(100, 1.0);
  v[50] = std::nan("");
  CHECK_THROWS_AS(fit_location_scale(series_of(v)), InputError);
}
