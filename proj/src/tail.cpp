#include "evtrisk/tail.hpp"

#include <algorithm>
#include <cmath>

#include "evtrisk/error.hpp"

namespace evtrisk {

std::size_t choose_N(std::size_t n, double c) {
  if (n < 100) throw InputError("tail-count schedule needs n >= 100, got " + std::to_string(n));
  if (!(c > 0.0)) throw InputError("tail-count constant c must be positive");
  double raw = std::round(c * std::pow(static_cast<double>(n), 0.79));
  double hi = static_cast<double>(n / 2);
  return static_cast<std::size_t>(std::clamp(raw, 10.0, hi));
}

double smoothed_cdf(double u, std::span<const double> residuals, double h3, const Kernel& kernel) {
  if (!(h3 > 0.0)) throw InputError("smoothed CDF bandwidth must be positive");
  if (residuals.empty()) throw InputError("smoothed CDF of an empty sample");
  double sum = 0.0;
  for (double e : residuals) sum += kernel.integrated((u - e) / h3);
  return sum / static_cast<double>(residuals.size());
}

double smoothed_quantile(double a, std::span<const double> residuals, double h3, const Kernel& kernel) {
  if (!(a > 0.0 && a < 1.0)) throw InputError("level must be in (0,1)");
  if (!(h3 > 0.0)) throw InputError("smoothed quantile bandwidth must be positive");
  if (residuals.empty()) throw InputError("smoothed quantile of an empty sample");
  auto [mn, mx] = std::minmax_element(residuals.begin(), residuals.end());
  double lo = *mn - 10.0 * h3;
  double hi = *mx + 10.0 * h3;
  double flo = smoothed_cdf(lo, residuals, h3, kernel);
  double fhi = smoothed_cdf(hi, residuals, h3, kernel);
  if (!(flo <= a && fhi >= a)) throw NumericalError("smoothed quantile: level not bracketed by the sample range");

  constexpr double tol = 1e-10;
  if (std::abs(flo - a) <= tol) return lo;
  if (std::abs(fhi - a) <= tol) return hi;
  for (int it = 0; it < 400; ++it) {
    double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) return mid;  // interval exhausted at double resolution
    double f = smoothed_cdf(mid, residuals, h3, kernel);
    if (std::abs(f - a) <= tol) return mid;
    (f < a ? lo : hi) = mid;
  }
  return lo + 0.5 * (hi - lo);
}

namespace {

TailSample finish(TailSample t) {
  auto first_above = std::upper_bound(t.residuals_sorted.begin(), t.residuals_sorted.end(), t.q_tilde);
  t.N_s = static_cast<std::size_t>(t.residuals_sorted.end() - first_above);
  if (t.N_s == 0) throw NumericalError("no exceedances above smoothed threshold");
  t.exceedances.reserve(t.N_s);
  for (auto it = first_above; it != t.residuals_sorted.end(); ++it) t.exceedances.push_back(*it - t.q_tilde);
  return t;
}

}  // namespace

TailSample extract_tail(std::span<const double> residuals, std::size_t N, double h3) {
  TailSample t;
  t.n = residuals.size();
  if (N == 0 || N >= t.n) throw InputError("tail count N must satisfy 0 < N < n");
  t.N = N;
  t.a_N = 1.0 - static_cast<double>(N) / static_cast<double>(t.n);
  t.h3 = h3;
  t.residuals_sorted.assign(residuals.begin(), residuals.end());
  std::sort(t.residuals_sorted.begin(), t.residuals_sorted.end());
  t.q_tilde = smoothed_quantile(t.a_N, t.residuals_sorted, h3);
  t.rule = ThresholdRule::smoothed;
  return finish(std::move(t));
}

TailSample extract_tail(const LocationScaleFit& fit, std::size_t N, double h3) {
  return extract_tail(fit.residuals(), N, h3);
}

TailSample extract_tail_empirical(std::span<const double> values, std::size_t N) {
  TailSample t;
  t.n = values.size();
  if (N == 0 || N >= t.n) throw InputError("tail count N must satisfy 0 < N < n");
  t.N = N;
  t.a_N = 1.0 - static_cast<double>(N) / static_cast<double>(t.n);
  t.residuals_sorted.assign(values.begin(), values.end());
  std::sort(t.residuals_sorted.begin(), t.residuals_sorted.end());
  t.q_tilde = t.residuals_sorted[t.n - N - 1];
  t.rule = ThresholdRule::empirical;
  return finish(std::move(t));
}

}  // namespace evtrisk
