#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "evtrisk/gpd.hpp"
#include "evtrisk/ingest.hpp"
#include "evtrisk/risk.hpp"
#include "evtrisk/smoothing.hpp"
#include "evtrisk/tail.hpp"

namespace evtrisk {

/// Sample whose interquartile range sets the smoothed-CDF bandwidth.
enum class H3Source {
  residuals,    // the standardized residuals being smoothed
  conditioning  // the lagged return Y_{t-1}
};

struct PipelineOptions {
  std::size_t lag = 1;
  std::optional<std::size_t> N;  // tail count; choose_N(n, c) when absent
  double c = 0.7;
  double delta = 0.01;
  H3Source h3_source = H3Source::residuals;
  TailFitOptions tail;
};

/// Both estimation stages on one series.
struct FittedModel {
  LocationScaleFit fit;
  double h3;
  TailFit tail;
  std::vector<std::string> warnings;
};

FittedModel fit_model(const ReturnSeries& series, const PipelineOptions& options = {});

/// Risk estimate at level a for the conditioning value x.
RiskEstimate forecast(const FittedModel& model, double a, const Eigen::VectorXd& x,
                      const RiskOptions& options = {});

}  // namespace evtrisk
