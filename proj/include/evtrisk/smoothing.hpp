#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evtrisk/ingest.hpp"

namespace evtrisk {

struct KernelValue {
  double weight;
  double integrated;
};

KernelValue epanechnikov(double u);
KernelValue gaussian(double u);

/// Symmetric second-order kernel. `radius` bounds the support [-radius, radius]
/// and is infinite for kernels with unbounded support.
struct Kernel {
  double (*weight)(double);
  double (*integrated)(double);
  double radius;

  static Kernel epanechnikov();
  static Kernel gaussian();
};

struct LocalLinearEstimate {
  double level;
  Eigen::VectorXd slope;
};

/// Weighted least squares of y on (1, X - query) with product-kernel weights.
/// Throws DegenerateFitError when fewer than d+2 points carry weight or the
/// weighted design is rank deficient.
LocalLinearEstimate local_linear(const Eigen::VectorXd& query, const Eigen::MatrixXd& data_x,
                                 const Eigen::VectorXd& data_y, double h,
                                 const Kernel& kernel = Kernel::epanechnikov());

/// Local-linear estimator bound to one data set. Scalar data is kept sorted so
/// compact kernels only touch the points inside the window.
class LocalLinearSmoother {
 public:
  LocalLinearSmoother(Eigen::MatrixXd x, Eigen::VectorXd y, double h,
                      Kernel kernel = Kernel::epanechnikov());

  LocalLinearEstimate estimate(const Eigen::VectorXd& query) const;

  /// Same as `estimate`, except that a degenerate window is widened to the
  /// smallest bandwidth holding a full-rank design. `widened` reports whether
  /// that happened.
  LocalLinearEstimate estimate_adaptive(const Eigen::VectorXd& query, bool* widened = nullptr) const;

  double bandwidth() const { return h_; }
  std::size_t dimension() const { return static_cast<std::size_t>(x_.cols()); }

 private:
  std::vector<std::size_t> window(const Eigen::VectorXd& query, double h) const;
  std::optional<LocalLinearEstimate> solve(const Eigen::VectorXd& query, double h,
                                           const std::vector<std::size_t>& rows) const;
  double distance(const Eigen::VectorXd& query, std::size_t row) const;

  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  double h_;
  Kernel kernel_;
  std::vector<std::size_t> order_;  // rows sorted by x when d == 1
  std::vector<double> sorted_x_;
};

struct BandwidthChoice {
  enum class Rule { plug_in, linear_fallback, floored, capped };
  double h;
  Rule rule;
};

/// Rule-of-thumb bandwidth for local-linear regression with an Epanechnikov
/// kernel, from a global quartic pilot fit. Clamped to [1e-3 * range, range].
BandwidthChoice rot_bandwidth_regression(std::span<const double> x, std::span<const double> y);

/// Linear-interpolation sample quantiles (type 7) at 0.25 and 0.75.
double interquartile_range(std::span<const double> x);

/// 0.79 * IQR(x) * n^(-1/5 + delta).
double rot_bandwidth_density(std::span<const double> x, std::size_t n, double delta = 0.01);

/// Residuals below this conditional variance are set to zero.
inline constexpr double kScaleFloor = 1e-12;

/// First-stage fit of Y_t = m(X_t) + sqrt(h(X_t)) eps_t with X_t = (Y_{t-1}, ..., Y_{t-lag}).
/// Immutable once built; evaluators are safe to call concurrently.
class LocationScaleFit {
 public:
  const Eigen::MatrixXd& x() const { return x_; }
  const Eigen::VectorXd& y() const { return y_; }
  std::size_t lag() const { return lag_; }
  std::size_t size() const { return static_cast<std::size_t>(y_.size()); }
  double h1() const { return h1_; }
  double h2() const { return h2_; }

  /// m-hat(X_t), h-hat(X_t) and eps-hat_t over the effective sample.
  const std::vector<double>& location() const { return location_; }
  const std::vector<double>& variance() const { return variance_; }
  const std::vector<double>& residuals() const { return residuals_; }

  double m_hat(const Eigen::VectorXd& query) const;
  double h_hat(const Eigen::VectorXd& query) const;
  double m_hat(double query) const;
  double h_hat(double query) const;

  /// Conditioning vector for forecasting the observation after the last one:
  /// (Y_n, ..., Y_{n-lag+1}).
  Eigen::VectorXd last_state() const { return last_state_; }

  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  friend LocationScaleFit fit_location_scale(const ReturnSeries&, std::size_t);
  LocationScaleFit() = default;

  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  std::size_t lag_ = 1;
  double h1_ = 0.0;
  double h2_ = 0.0;
  std::vector<double> location_;
  std::vector<double> variance_;
  std::vector<double> residuals_;
  Eigen::VectorXd last_state_;
  std::vector<std::string> warnings_;
  std::shared_ptr<const LocalLinearSmoother> m_smoother_;  // null when X has no spread
  std::shared_ptr<const LocalLinearSmoother> h_smoother_;
  double m_constant_ = 0.0;
  double h_constant_ = 0.0;
};

LocationScaleFit fit_location_scale(const ReturnSeries& y, std::size_t lag = 1);

}  // namespace evtrisk
