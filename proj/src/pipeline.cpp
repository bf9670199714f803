#include "evtrisk/pipeline.hpp"

#include "evtrisk/error.hpp"

namespace evtrisk {

FittedModel fit_model(const ReturnSeries& series, const PipelineOptions& options) {
  LocationScaleFit fit = fit_location_scale(series, options.lag);
  const auto& eps = fit.residuals();
  const std::size_t n = eps.size();
  const std::size_t N = options.N ? *options.N : choose_N(n, options.c);
  if (N == 0 || N >= n) throw InputError("tail count N must satisfy 0 < N < n=" + std::to_string(n));

  double h3 = 0.0;
  if (options.h3_source == H3Source::residuals) {
    h3 = rot_bandwidth_density(eps, n, options.delta);
  } else {
    std::vector<double> x0(n);
    for (std::size_t t = 0; t < n; ++t) x0[t] = fit.x()(static_cast<Eigen::Index>(t), 0);
    h3 = rot_bandwidth_density(x0, n, options.delta);
  }

  TailFit tail = fit_tail(extract_tail(eps, N, h3), options.tail);
  std::vector<std::string> warnings = fit.warnings();
  warnings.insert(warnings.end(), tail.warnings.begin(), tail.warnings.end());
  return FittedModel{std::move(fit), h3, std::move(tail), std::move(warnings)};
}

RiskEstimate forecast(const FittedModel& model, double a, const Eigen::VectorXd& x, const RiskOptions& options) {
  const double m = model.fit.m_hat(x);
  const double h = model.fit.h_hat(x);
  return estimate_risk(a, model.tail, m, h, options);
}

}  // namespace evtrisk
