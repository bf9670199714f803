#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evtrisk/tail.hpp"

namespace evtrisk {

/// G(u) = 1 - (1 - k u / sigma)^(1/k); k < 0 is a heavy (Pareto-type) tail.
struct GpdParams {
  double sigma;
  double k;
};

/// log g(z); -infinity outside the support.
double gpd_logpdf(double z, GpdParams p);

struct GpdLogLik {
  double value;
  Eigen::Vector2d gradient;  // d/d(log sigma), d/dk
  Eigen::Matrix2d hessian;
};

/// Sum of log densities with derivatives in (log sigma, k). Value is -infinity
/// (derivatives zero) when some z falls outside the support.
GpdLogLik gpd_loglik(std::span<const double> z, GpdParams p);

struct GpdMle {
  GpdParams params;
  double loglik;
  Eigen::Vector2d gradient;  // d/d sigma, d/dk at the solution
  Eigen::Matrix2d hessian;   // in (sigma, k)
  int iterations;
  GpdParams start;
  double start_loglik;
  std::vector<std::string> warnings;
};

/// Maximizes sum log g(z_i) over sigma > 0, k in (-0.9, 0.9) from `start`.
GpdMle gpd_mle(std::span<const double> exceedances, GpdParams start);

/// Starts from moment estimates (sigma0 = -k_mom * q, k0 = k_mom) when those are
/// admissible, otherwise from (mean exceedance, -0.1).
GpdMle gpd_mle(const TailSample& tail);

struct MomentStats {
  double k_mom;  // -mean log(e / q)
  double M_n;    // mean log(e / q)^2
  double curvature() const { return M_n - 2.0 * k_mom * k_mom; }
};

MomentStats moment_stats(std::span<const double> upper, double threshold);
MomentStats moment_stats(const TailSample& tail);

struct RhoEstimate {
  enum class Status { estimated, clamped, fallback, user };
  double value;
  double raw;  // before clamping; NaN for fallback
  Status status;
  std::size_t N_c = 0;
  std::size_t N_half_c = 0;
  std::string note;
};

inline constexpr double kRhoMin = -20.0;
inline constexpr double kRhoMax = -0.05;
inline constexpr double kRhoFallback = -2.0;

/// (round(c N ln n), round(c/2 N ln n)); both must lie in [10, n-1].
std::pair<std::size_t, std::size_t> rho_tail_counts(std::size_t N, std::size_t n, double c = 0.25);

RhoEstimate rho_from_moments(MomentStats at_c, MomentStats at_half_c);

/// Second-order parameter from moment statistics at the two enlarged tail
/// counts. Thresholds are smoothed quantiles when h3 is given, order statistics otherwise.
RhoEstimate rho_hat(std::span<const double> residuals_sorted, std::size_t N, double c = 0.25,
                    std::optional<double> h3 = std::nullopt);

Eigen::Matrix2d H_matrix(double k);
Eigen::Matrix2d H_inverse(double k);
Eigen::Matrix2d V2_matrix(double k);
Eigen::Matrix<double, 5, 5> Vb_matrix(double k);
Eigen::Matrix<double, 2, 5> A_matrix(double k, double rho);

/// d = 2 k^4 rho / (1 + rho k)^2.
double d_coefficient(double k, double rho);

/// Which shape value feeds the shape-dependent factors of the bias correction.
enum class BiasAnchor {
  moment_shape,  // k_mom from the moment statistics
  fitted_shape   // the maximum likelihood k
};

struct BiasCorrection {
  GpdParams params;
  double anchor_k;
  double d_hat;
  double step;  // (M_n - 2 k_mom^2) / ((1 - 1/k - rho) d)
};

BiasCorrection bias_correct_params(GpdParams fitted, MomentStats moments, double rho,
                                   BiasAnchor anchor = BiasAnchor::moment_shape);

struct TailFitOptions {
  bool bias_correction = true;
  double rho_c = 0.25;
  std::optional<double> rho;  // user override, skips estimation
  BiasAnchor anchor = BiasAnchor::moment_shape;
};

struct TailFit {
  TailSample sample;
  GpdMle mle;
  GpdParams params;
  std::optional<MomentStats> moments;  // absent when the threshold is not positive
  std::optional<RhoEstimate> rho;
  std::optional<BiasCorrection> bc;
  std::vector<std::string> warnings;

  const BiasCorrection& correction() const;
};

TailFit fit_tail(TailSample sample, const TailFitOptions& options = {});

}  // namespace evtrisk
