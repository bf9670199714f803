#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "evtrisk/smoothing.hpp"

namespace evtrisk {

/// round(c * n^0.79), clamped to [10, n/2].
std::size_t choose_N(std::size_t n, double c = 0.7);

/// Rosenblatt-integrated CDF: mean of K((u - e_t) / h3) over the residuals.
double smoothed_cdf(double u, std::span<const double> residuals, double h3,
                    const Kernel& kernel = Kernel::epanechnikov());

/// Solves smoothed_cdf(q) = a by bisection to |F(q) - a| <= 1e-10.
double smoothed_quantile(double a, std::span<const double> residuals, double h3,
                         const Kernel& kernel = Kernel::epanechnikov());

enum class ThresholdRule {
  smoothed,   // q = smoothed quantile at a_N
  empirical   // q = order statistic e_(n-N), exactly N exceedances
};

struct TailSample {
  std::vector<double> residuals_sorted;  // ascending
  std::size_t n = 0;
  std::size_t N = 0;
  double a_N = 0.0;
  double q_tilde = 0.0;
  double h3 = 0.0;  // zero under the empirical rule
  std::size_t N_s = 0;
  std::vector<double> exceedances;  // ascending, all > 0
  ThresholdRule rule = ThresholdRule::smoothed;

  /// The N_s residuals above the threshold, ascending.
  std::span<const double> upper() const {
    return std::span<const double>(residuals_sorted).subspan(n - N_s);
  }
};

TailSample extract_tail(std::span<const double> residuals, std::size_t N, double h3);
TailSample extract_tail(const LocationScaleFit& fit, std::size_t N, double h3);

/// Threshold at the (n-N)-th order statistic; used when the innovations are observed.
TailSample extract_tail_empirical(std::span<const double> values, std::size_t N);

}  // namespace evtrisk
