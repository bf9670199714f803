#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "evtrisk/gpd.hpp"

namespace evtrisk {

/// Tail-quantile extrapolation q(a) = q + (sigma/k)(1 - ((n/N)(1-a))^k).
double q_eps(double a, GpdParams p, double q_tilde, std::size_t n, std::size_t N);
double q_eps(double a, const TailFit& tail);

/// q / (1 + k); requires k > -1.
double es_eps(double q, double k);

/// Ingredients of the second-order correction shared by the quantile and ES terms.
struct CorrectionTerms {
  double rho;
  double d_hat;
  double curvature;  // M_n - 2 k_mom^2
  double k;          // shape used in the 1/k factors
};

CorrectionTerms correction_terms(const TailFit& tail);

/// B_q = (Z^rho - 1) / (rho d) * curvature.
double quantile_bias_term(double Z_hat, const CorrectionTerms& c);

/// Bias-corrected extrapolation with corrected parameters and B_q.
double q_eps_bc(double a, GpdParams corrected, double q_tilde, double B_q, std::size_t n, std::size_t N);

struct CorrectedQuantile {
  double value;
  double B_q;
  double Z_hat;
};
CorrectedQuantile q_eps_bc(double a, const TailFit& tail);

/// q_bc / (1 + k_bc); requires k_bc > -1.
double es_eps_bc(double q_bc, double k_bc);

/// B_E = q_bc Z^rho curvature / (d (1 + 1/k + rho)(1 + 1/k)).
double es_bias_term(double q_bc, double Z_hat, const CorrectionTerms& c);

double cvar(double m_hat, double h_hat, double q);
double ces(double m_hat, double h_hat, double es, double B_E = 0.0);

struct AsymptoticVariances {
  double sigma1;     // uncorrected quantile
  double sigma1_bc;  // corrected quantile, also conditional quantile
  double sigma2;     // uncorrected innovation ES
  double sigma2_bc;  // corrected innovation ES
  double sigma3_bc;  // corrected conditional ES
};

/// All variance expressions at shape k, second-order parameter rho and
/// quantile ratio Z. Requires k < 0, k != -1, rho < 0.
AsymptoticVariances asymptotic_variances(double k, double rho, double Z);

struct Interval {
  double lower;
  double upper;
  bool one_sided;  // 1 - z sqrt(v/N) <= 0, the far bound is infinite
};

inline constexpr double kZ975 = 1.959963984540054;

/// (est / (1 + z s), est / (1 - z s)) with s = sqrt(variance / N).
Interval asymptotic_ci(double estimate, double variance, std::size_t N, double z = kZ975);

struct CrossoverConstants {
  std::optional<double> C1;  // absent when sigma1_bc < sigma1
  std::optional<double> C2;  // absent when sigma3_bc < sigma2
};

CrossoverConstants mse_crossover(double k, double rho, double Z);

struct RiskOptions {
  bool bias_correction = true;
  double z = kZ975;
};

struct RiskEstimate {
  double a = 0.0;
  double q_eps = 0.0;
  double es_eps = 0.0;
  double Z_hat = 0.0;
  std::optional<double> q_eps_bc;
  std::optional<double> es_eps_bc;
  std::optional<double> B_q;
  std::optional<double> B_E;
  double m_hat = 0.0;
  double h_hat = 0.0;
  double cvar = 0.0;  // corrected when bias correction ran
  double ces = 0.0;
  double cvar_uncorrected = 0.0;
  double ces_uncorrected = 0.0;
  std::optional<AsymptoticVariances> variances;
  std::optional<Interval> ci_cvar;
  std::optional<Interval> ci_ces;
  std::vector<std::string> warnings;
};

/// Innovation estimates at level a combined with m-hat(x), h-hat(x).
RiskEstimate estimate_risk(double a, const TailFit& tail, double m_hat, double h_hat,
                           const RiskOptions& options = {});

}  // namespace evtrisk
