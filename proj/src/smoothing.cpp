#include "evtrisk/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "evtrisk/error.hpp"

namespace evtrisk {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double epan_weight(double u) { return std::abs(u) < 1.0 ? 0.75 * (1.0 - u * u) : 0.0; }
double epan_integrated(double u) {
  if (u <= -1.0) return 0.0;
  if (u >= 1.0) return 1.0;
  return 0.75 * (u - u * u * u / 3.0) + 0.5;
}
double gauss_weight(double u) { return kInvSqrt2Pi * std::exp(-0.5 * u * u); }
double gauss_integrated(double u) { return 0.5 * std::erfc(-u / std::sqrt(2.0)); }

std::string describe(const Eigen::VectorXd& q) {
  std::ostringstream os;
  os.precision(10);
  os << "query (";
  for (Eigen::Index j = 0; j < q.size(); ++j) os << (j ? ", " : "") << q[j];
  os << ")";
  return os.str();
}

double range_of(std::span<const double> x) {
  auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return *hi - *lo;
}

}  // namespace

KernelValue epanechnikov(double u) { return {epan_weight(u), epan_integrated(u)}; }
KernelValue gaussian(double u) { return {gauss_weight(u), gauss_integrated(u)}; }

Kernel Kernel::epanechnikov() { return {epan_weight, epan_integrated, 1.0}; }
Kernel Kernel::gaussian() {
  return {gauss_weight, gauss_integrated, std::numeric_limits<double>::infinity()};
}

LocalLinearSmoother::LocalLinearSmoother(Eigen::MatrixXd x, Eigen::VectorXd y, double h, Kernel kernel)
    : x_(std::move(x)), y_(std::move(y)), h_(h), kernel_(kernel) {
  if (!(h_ > 0.0)) throw InputError("local-linear bandwidth must be positive");
  if (x_.rows() != y_.size()) throw InputError("local-linear data_x and data_y differ in length");
  if (x_.cols() < 1) throw InputError("local-linear data_x needs at least one column");
  if (x_.cols() == 1) {
    order_.resize(static_cast<std::size_t>(x_.rows()));
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return x_(a, 0) < x_(b, 0); });
    sorted_x_.reserve(order_.size());
    for (auto i : order_) sorted_x_.push_back(x_(i, 0));
  }
}

std::vector<std::size_t> LocalLinearSmoother::window(const Eigen::VectorXd& query, double h) const {
  std::vector<std::size_t> rows;
  if (x_.cols() == 1 && std::isfinite(kernel_.radius)) {
    double reach = h * kernel_.radius;
    auto lo = std::lower_bound(sorted_x_.begin(), sorted_x_.end(), query[0] - reach);
    auto hi = std::upper_bound(sorted_x_.begin(), sorted_x_.end(), query[0] + reach);
    rows.assign(order_.begin() + (lo - sorted_x_.begin()), order_.begin() + (hi - sorted_x_.begin()));
    std::sort(rows.begin(), rows.end());
  } else {
    rows.resize(static_cast<std::size_t>(x_.rows()));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }
  return rows;
}

std::optional<LocalLinearEstimate> LocalLinearSmoother::solve(const Eigen::VectorXd& query, double h,
                                                              const std::vector<std::size_t>& rows) const {
  const Eigen::Index d = x_.cols();
  std::vector<std::pair<std::size_t, double>> active;
  active.reserve(rows.size());
  for (auto r : rows) {
    double w = 1.0;
    for (Eigen::Index j = 0; j < d && w > 0.0; ++j) w *= kernel_.weight((x_(r, j) - query[j]) / h);
    if (w > 0.0) active.emplace_back(r, w);
  }
  if (active.size() < static_cast<std::size_t>(d + 2)) return std::nullopt;

  Eigen::MatrixXd design(static_cast<Eigen::Index>(active.size()), d + 1);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(active.size()));
  for (std::size_t i = 0; i < active.size(); ++i) {
    auto [r, w] = active[i];
    double s = std::sqrt(w);
    auto row = static_cast<Eigen::Index>(i);
    design(row, 0) = s;
    for (Eigen::Index j = 0; j < d; ++j) design(row, j + 1) = s * (x_(r, j) - query[j]);
    rhs[row] = s * y_[r];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-12);
  if (qr.rank() < d + 1) return std::nullopt;
  Eigen::VectorXd beta = qr.solve(rhs);
  return LocalLinearEstimate{beta[0], beta.tail(d)};
}

double LocalLinearSmoother::distance(const Eigen::VectorXd& query, std::size_t row) const {
  double dist = 0.0;
  for (Eigen::Index j = 0; j < x_.cols(); ++j)
    dist = std::max(dist, std::abs(x_(static_cast<Eigen::Index>(row), j) - query[j]));
  return dist;
}

LocalLinearEstimate LocalLinearSmoother::estimate(const Eigen::VectorXd& query) const {
  if (query.size() != x_.cols()) throw InputError("local-linear query has the wrong dimension");
  if (auto est = solve(query, h_, window(query, h_))) return *est;
  throw DegenerateFitError("local-linear fit is degenerate at " + describe(query) + " with bandwidth " +
                           std::to_string(h_));
}

LocalLinearEstimate LocalLinearSmoother::estimate_adaptive(const Eigen::VectorXd& query, bool* widened) const {
  if (query.size() != x_.cols()) throw InputError("local-linear query has the wrong dimension");
  if (widened) *widened = false;
  if (auto est = solve(query, h_, window(query, h_))) return *est;

  if (std::isfinite(kernel_.radius)) {
    std::vector<double> dist(static_cast<std::size_t>(x_.rows()));
    for (std::size_t r = 0; r < dist.size(); ++r) dist[r] = distance(query, r);
    std::sort(dist.begin(), dist.end());
    dist.erase(std::unique(dist.begin(), dist.end()), dist.end());
    // The farthest of the points needed sits at u = 0.8, where it still carries weight.
    for (double reach : dist) {
      double h = 1.25 * reach / kernel_.radius;
      if (h <= h_) continue;
      if (auto est = solve(query, h, window(query, h))) {
        if (widened) *widened = true;
        return *est;
      }
    }
  }
  throw DegenerateFitError("local-linear fit is degenerate at " + describe(query) +
                           " for every bandwidth: conditioning values are collinear");
}

LocalLinearEstimate local_linear(const Eigen::VectorXd& query, const Eigen::MatrixXd& data_x,
                                 const Eigen::VectorXd& data_y, double h, const Kernel& kernel) {
  return LocalLinearSmoother(data_x, data_y, h, kernel).estimate(query);
}

BandwidthChoice rot_bandwidth_regression(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n != y.size()) throw InputError("bandwidth selector: x and y differ in length");
  if (n < 10) throw InputError("bandwidth selector needs at least 10 points");
  const double range = range_of(x);
  if (!(range > 0.0)) throw InputError("bandwidth selector: x values are all equal");

  // Quartic pilot in u = (x - centre) / half-range keeps the Vandermonde design well conditioned.
  const double centre = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double half = range / 2.0;
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), 5);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double u = (x[i] - centre) / half;
    double p = 1.0;
    for (int j = 0; j < 5; ++j, p *= u) design(static_cast<Eigen::Index>(i), j) = p;
    rhs[static_cast<Eigen::Index>(i)] = y[i];
  }
  Eigen::VectorXd b = design.colPivHouseholderQr().solve(rhs);
  Eigen::VectorXd resid = rhs - design * b;
  const double sigma2 = resid.squaredNorm() / static_cast<double>(n - 5);

  double curvature = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double u = (x[i] - centre) / half;
    double m2 = (2.0 * b[2] + 6.0 * b[3] * u + 12.0 * b[4] * u * u) / (half * half);
    curvature += m2 * m2;
  }

  // Curvature at rounding level relative to the spread of y counts as zero.
  auto [ylo, yhi] = std::minmax_element(y.begin(), y.end());
  const double spread = *yhi - *ylo;
  const double curvature_size = std::sqrt(curvature / static_cast<double>(n)) * range * range;
  if (!(curvature_size > 1e-9 * spread)) return {range / 2.0, BandwidthChoice::Rule::linear_fallback};

  double h = std::pow(15.0, 0.2) * std::pow(sigma2 * range / curvature, 0.2);
  if (!(h >= 1e-3 * range)) return {1e-3 * range, BandwidthChoice::Rule::floored};
  if (h > range) return {range, BandwidthChoice::Rule::capped};
  return {h, BandwidthChoice::Rule::plug_in};
}

double interquartile_range(std::span<const double> x) {
  if (x.empty()) throw InputError("interquartile range of an empty sample");
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  auto quantile = [&](double p) {
    double pos = p * static_cast<double>(s.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  return quantile(0.75) - quantile(0.25);
}

double rot_bandwidth_density(std::span<const double> x, std::size_t n, double delta) {
  if (n < 4) throw InputError("density bandwidth needs n >= 4");
  double r = interquartile_range(x);
  if (!(r > 0.0)) throw InputError("degenerate sample: interquartile range is zero");
  return 0.79 * r * std::pow(static_cast<double>(n), -0.2 + delta);
}

double LocationScaleFit::m_hat(const Eigen::VectorXd& query) const {
  return m_smoother_ ? m_smoother_->estimate_adaptive(query).level : m_constant_;
}

double LocationScaleFit::h_hat(const Eigen::VectorXd& query) const {
  return h_smoother_ ? h_smoother_->estimate_adaptive(query).level : h_constant_;
}

double LocationScaleFit::m_hat(double query) const { return m_hat(Eigen::VectorXd::Constant(1, query)); }
double LocationScaleFit::h_hat(double query) const { return h_hat(Eigen::VectorXd::Constant(1, query)); }

LocationScaleFit fit_location_scale(const ReturnSeries& series, std::size_t lag) {
  const auto& v = series.values;
  if (lag < 1) throw InputError("lag must be at least 1");
  if (v.size() <= 20) throw InputError("series too short for the first-stage fit: need more than 20 values");
  if (v.size() <= lag + 10) throw InputError("series too short for the requested lag");
  for (std::size_t t = 0; t < v.size(); ++t)
    if (!std::isfinite(v[t])) throw InputError("series value " + std::to_string(t + 1) + " is not finite");

  LocationScaleFit fit;
  const std::size_t n = v.size() - lag;
  const auto d = static_cast<Eigen::Index>(lag);
  fit.lag_ = lag;
  fit.x_.resize(static_cast<Eigen::Index>(n), d);
  fit.y_.resize(static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < n; ++t) {
    for (Eigen::Index j = 0; j < d; ++j)
      fit.x_(static_cast<Eigen::Index>(t), j) = v[t + lag - 1 - static_cast<std::size_t>(j)];
    fit.y_[static_cast<Eigen::Index>(t)] = v[t + lag];
  }
  fit.last_state_.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) fit.last_state_[j] = v[v.size() - 1 - static_cast<std::size_t>(j)];

  // Scalar bandwidth rules use the first lag as the pilot covariate.
  std::vector<double> x0(n), yv(n);
  for (std::size_t t = 0; t < n; ++t) {
    x0[t] = fit.x_(static_cast<Eigen::Index>(t), 0);
    yv[t] = fit.y_[static_cast<Eigen::Index>(t)];
  }
  const bool flat = range_of(x0) == 0.0;

  auto note_rule = [&](const BandwidthChoice& b, const char* which) {
    using R = BandwidthChoice::Rule;
    if (b.rule == R::linear_fallback)
      fit.warnings_.push_back(std::string(which) + ": pilot curvature is zero, using half the data range");
    else if (b.rule == R::floored)
      fit.warnings_.push_back(std::string(which) + ": plug-in bandwidth floored at 1e-3 of the data range");
    else if (b.rule == R::capped)
      fit.warnings_.push_back(std::string(which) + ": plug-in bandwidth capped at the data range");
  };

  std::size_t widened_m = 0;
  std::size_t widened_h = 0;
  fit.location_.resize(n);
  if (flat) {
    fit.warnings_.push_back("conditioning variable is constant: location and scale reduce to sample moments");
    fit.h1_ = std::numeric_limits<double>::infinity();
    const bool y_constant = std::all_of(yv.begin(), yv.end(), [&](double y) { return y == yv[0]; });
    fit.m_constant_ = y_constant ? yv[0] : std::accumulate(yv.begin(), yv.end(), 0.0) / static_cast<double>(n);
    std::fill(fit.location_.begin(), fit.location_.end(), fit.m_constant_);
  } else {
    BandwidthChoice b1 = rot_bandwidth_regression(x0, yv);
    note_rule(b1, "h1");
    fit.h1_ = b1.h;
    fit.m_smoother_ = std::make_shared<LocalLinearSmoother>(fit.x_, fit.y_, fit.h1_);
    for (std::size_t t = 0; t < n; ++t) {
      bool w = false;
      fit.location_[t] = fit.m_smoother_->estimate_adaptive(fit.x_.row(static_cast<Eigen::Index>(t)).transpose(), &w).level;
      widened_m += w;
    }
  }

  Eigen::VectorXd u2(static_cast<Eigen::Index>(n));
  std::vector<double> u(n), u2v(n);
  for (std::size_t t = 0; t < n; ++t) {
    u[t] = yv[t] - fit.location_[t];
    u2v[t] = u[t] * u[t];
    u2[static_cast<Eigen::Index>(t)] = u2v[t];
  }

  fit.variance_.resize(n);
  if (flat) {
    fit.h2_ = std::numeric_limits<double>::infinity();
    fit.h_constant_ = std::accumulate(u2v.begin(), u2v.end(), 0.0) / static_cast<double>(n);
    std::fill(fit.variance_.begin(), fit.variance_.end(), fit.h_constant_);
  } else {
    BandwidthChoice b2 = rot_bandwidth_regression(x0, u2v);
    note_rule(b2, "h2");
    fit.h2_ = b2.h;
    fit.h_smoother_ = std::make_shared<LocalLinearSmoother>(fit.x_, u2, fit.h2_);
    for (std::size_t t = 0; t < n; ++t) {
      bool w = false;
      fit.variance_[t] = fit.h_smoother_->estimate_adaptive(fit.x_.row(static_cast<Eigen::Index>(t)).transpose(), &w).level;
      widened_h += w;
    }
  }
  if (widened_m + widened_h > 0)
    fit.warnings_.push_back("local-linear window widened at " + std::to_string(widened_m) + " (m) and " +
                            std::to_string(widened_h) + " (h) isolated sample points");

  fit.residuals_.resize(n);
  std::size_t nonpositive = 0;
  bool any_residual = false;
  for (std::size_t t = 0; t < n; ++t) {
    if (fit.variance_[t] > kScaleFloor) {
      fit.residuals_[t] = u[t] / std::sqrt(fit.variance_[t]);
    } else {
      fit.residuals_[t] = 0.0;
      ++nonpositive;
    }
    any_residual = any_residual || u[t] != 0.0;
  }
  if (nonpositive == n && any_residual)
    throw NumericalError("conditional variance estimate is non-positive at every sample point");
  if (nonpositive > 0)
    fit.warnings_.push_back(std::to_string(nonpositive) + " residuals set to zero where the variance estimate is non-positive");
  return fit;
}

}  // namespace evtrisk
