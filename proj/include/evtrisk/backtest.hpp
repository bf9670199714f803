#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evtrisk/ingest.hpp"
#include "evtrisk/pipeline.hpp"

namespace evtrisk {

struct BacktestConfig {
  std::size_t m = 1500;                   // observations used, from the start of the series
  std::size_t n = 1000;                   // window length
  std::vector<double> a_levels{0.95, 0.99, 0.995};
  std::optional<std::size_t> N;           // round(n^0.79) when absent
  std::uint64_t seed = 1;
  std::size_t B_boot = 9999;
  bool bias_corrected = false;            // score the corrected forecasts instead
  PipelineOptions pipeline;

  void validate(std::size_t series_length) const;
  std::size_t tail_count() const;
};

struct ForecastStep {
  std::size_t index;       // position of the forecast target in the series
  double x;                // conditioning value
  double realized;         // the target observation
  double sqrt_h;
  std::vector<double> cvar;  // one per level
  std::vector<double> ces;
  bool carried = false;      // window fit failed, previous forecast reused
  std::string error;
};

struct ForecastStream {
  std::vector<ForecastStep> steps;
  std::size_t carried = 0;
};

/// Fits every window y[j .. j+n-1] and forecasts y[j+n] for j = 0 .. m-n-1.
ForecastStream rolling_forecast(const ReturnSeries& series, const BacktestConfig& cfg, unsigned threads = 1);

struct CoverageTest {
  std::size_t W;
  double expected;
  double z;
  double p;
};

/// Two-sided normal test of the violation count against T(1-a).
CoverageTest coverage_test(std::span<const char> violations, double a);
CoverageTest coverage_test(std::size_t W, std::size_t T, double a);

struct DurationTests {
  std::optional<double> p_ind;  // absent: not evaluable
  std::optional<double> p_cc;
  std::optional<double> T_ind;
  std::optional<double> T_cc;
  std::optional<double> shape;  // Weibull b at the maximum
  bool shape_at_bound = false;
  std::string note;
};

struct Durations {
  std::vector<double> length;
  std::vector<char> censored;
};

/// Gaps between violations; a leading run without a violation and the trailing
/// run after the last one enter as censored spells.
Durations violation_durations(std::span<const char> violations);

/// Weibull-alternative likelihood-ratio tests of memoryless durations.
DurationTests duration_tests(std::span<const char> violations, double a);

struct EsBootstrapTest {
  std::optional<double> p;
  std::optional<double> t_obs;
  std::size_t count = 0;
  bool zero_variance = false;
};

/// One-sided bootstrap test of mean > 0 for the ES exceedance residuals.
EsBootstrapTest es_bootstrap_test(std::span<const double> residuals, std::size_t B_boot, std::uint64_t seed);

struct LevelReport {
  double a;
  CoverageTest coverage;
  DurationTests durations;
  EsBootstrapTest es;
  std::vector<std::size_t> violation_index;
};

struct BacktestReport {
  BacktestConfig config;
  ForecastStream forecasts;
  std::vector<LevelReport> levels;
};

BacktestReport run_backtest(const ReturnSeries& series, const BacktestConfig& cfg, unsigned threads = 1);

}  // namespace evtrisk
