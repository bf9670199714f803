#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "evtrisk/gpd.hpp"
#include "evtrisk/ingest.hpp"

namespace evtrisk {

enum class Heteroskedasticity { h1, h2 };

struct McDesign {
  std::size_t n = 1000;
  Heteroskedasticity variant = Heteroskedasticity::h1;
  double theta = 0.0;
  double v = 3.0;
  std::size_t reps = 200;
  std::uint64_t seed = 1;
  std::vector<double> a_levels{0.95, 0.99, 0.999};
  double c = 0.7;
  std::size_t burn_in = 1000;
  BiasAnchor anchor = BiasAnchor::moment_shape;

  void validate() const;
  std::string label() const;
};

/// Replication-keyed generator: the stream depends only on (seed, stream).
std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream);

/// Uniform on the open interval (0, 1) from the top 53 bits.
double open_uniform(std::mt19937_64& gen);

/// Student-t(v) rescaled to unit variance.
class StandardizedT {
 public:
  explicit StandardizedT(double v);
  double quantile(double a) const;
  double cdf(double x) const;
  double pdf(double x) const;
  /// E[eps | eps > q], closed form.
  double tail_mean(double q) const;
  double draw(std::mt19937_64& gen) const { return quantile(open_uniform(gen)); }
  double scale() const { return scale_; }
  double dof() const { return v_; }

 private:
  double v_;
  double scale_;  // sqrt(v / (v - 2))
};

double location_function(double y);
double variance_function(Heteroskedasticity variant, double y);

/// One retained path Y_0..Y_n (n+1 values) so that the lag-1 regression sample has n pairs.
struct SimulatedPath {
  ReturnSeries series;
  std::vector<double> innovations;  // eps_t aligned with series.values
  std::vector<double> variance;     // h(t) aligned with series.values
  double m_next;                    // m(Y_n)
  double h_next;                    // h(n+1)
};

/// Runs the recursion on supplied innovations; needs burn_in + n + 1 of them.
SimulatedPath simulate_path(const McDesign& design, std::span<const double> innovations);
SimulatedPath simulate_path(const McDesign& design, std::uint64_t replication);

struct TrueRisk {
  double q;
  double E;
};

/// Conditional a-quantile and tail mean of m + sqrt(h) eps.
TrueRisk true_risk(double m, double h, double a, const StandardizedT& dist);

struct EstimatorSummary {
  std::string name;
  std::string quantity;  // sigma, k, q, E
  std::optional<double> a;
  double B = 0.0, S = 0.0, R = 0.0;              // after trimming
  double B_raw = 0.0, S_raw = 0.0, R_raw = 0.0;  // untrimmed
  double relative_R = 0.0;
  std::optional<double> ecp;
  std::size_t used = 0;
};

/// B, S (divisor m) and R of errors, optionally after dropping the floor(trim*m)
/// replications with the smallest and largest estimates.
struct ErrorMoments {
  double B, S, R;
};
ErrorMoments error_moments(std::span<const double> estimates, std::span<const double> truths, double trim);

struct McResult {
  McDesign design;
  std::vector<EstimatorSummary> estimators;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;
};

/// Simulates `reps` replications in parallel and aggregates in replication order.
/// Throws NumericalError when more than 5% of replications fail.
McResult run_experiment(const McDesign& design, unsigned threads = 1);

/// Designs of the published grids: v in {3,6}, n in {1000,4000}, h1/h2, theta = 0.
std::vector<McDesign> preset_designs(const std::string& name, std::size_t reps, std::uint64_t seed);

}  // namespace evtrisk
