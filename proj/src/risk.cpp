#include "evtrisk/risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "evtrisk/error.hpp"

namespace evtrisk {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

void nonzero(double value, const char* factor) {
  if (std::abs(value) < 1e-12 || !std::isfinite(value))
    throw PoleError(std::string("pole: factor ") + factor + " vanishes");
}

// Positive semidefinite quadratic forms can land a few ulps below zero.
double clamp_form(double v) { return v < 0.0 && v > -1e-10 ? 0.0 : v; }

struct Blocks {
  Eigen::Vector2d cb;
  Eigen::Vector2d b;
  Eigen::Matrix2d Hi;
  Eigen::Matrix<double, 1, 5> cq;
  Eigen::Matrix<double, 1, 5> shape_row;  // (0 1) H^-1 A
  Eigen::Matrix<double, 5, 5> Vb;
};

Blocks blocks(double k, double rho, double Z) {
  nonzero(k, "k");
  nonzero(rho, "rho");
  if (!(Z > 0.0)) throw InputError("quantile ratio Z must be positive");
  Blocks B;
  const double zi = 1.0 / Z;
  B.cb << -(zi - 1.0) / k, (std::log(Z) + zi - 1.0) / (k * k);
  nonzero(2.0 * k - 1.0, "2k-1");
  nonzero(1.0 - k, "1-k");
  B.b << -(1.0 - k) / (k * (2.0 * k - 1.0)), -1.0 / ((1.0 - k) * (1.0 - 2.0 * k));
  B.Hi = H_inverse(k);
  const Eigen::Matrix<double, 2, 5> A = A_matrix(k, rho);
  const double zr = std::pow(Z, rho) - 1.0;
  const double e2 = (1.0 + rho * k) * (1.0 + rho * k);
  const double k2 = k * k, k3 = k2 * k, r2 = rho * rho;
  Eigen::Matrix<double, 1, 5> v;
  v << 0.0, 0.0, zi + zr * (1.0 + 2.0 * k) * e2 / (k3 * r2), -zr * e2 / (2.0 * k3 * r2), -2.0 * zr * e2 / (k2 * r2);
  B.cq = k * B.cb.transpose() * B.Hi * A + v;
  B.shape_row = Eigen::RowVector2d(0.0, 1.0) * B.Hi * A;
  B.Vb = Vb_matrix(k);
  return B;
}

}  // namespace

double q_eps(double a, GpdParams p, double q_tilde, std::size_t n, std::size_t N) {
  if (!(a > 0.0 && a < 1.0)) throw InputError("level must be in (0,1)");
  const double a_N = 1.0 - static_cast<double>(N) / static_cast<double>(n);
  if (!(a > a_N)) throw InputError("target level below threshold level (a=" + fmt(a) + " <= a_N=" + fmt(a_N) + ")");
  const double ratio = static_cast<double>(n) / static_cast<double>(N) * (1.0 - a);
  if (std::abs(p.k) < 1e-8) return q_tilde - p.sigma * std::log(ratio);
  return q_tilde + p.sigma / p.k * (1.0 - std::pow(ratio, p.k));
}

double q_eps(double a, const TailFit& tail) {
  return q_eps(a, tail.params, tail.sample.q_tilde, tail.sample.n, tail.sample.N);
}

double es_eps(double q, double k) {
  if (!(k > -1.0)) throw NumericalError("expected shortfall undefined (k <= -1)");
  return q / (1.0 + k);
}

CorrectionTerms correction_terms(const TailFit& tail) {
  const BiasCorrection& bc = tail.correction();
  return {tail.rho->value, bc.d_hat, tail.moments->curvature(), bc.anchor_k};
}

double quantile_bias_term(double Z_hat, const CorrectionTerms& c) {
  nonzero(c.rho * c.d_hat, "rho*d");
  return (std::pow(Z_hat, c.rho) - 1.0) / (c.rho * c.d_hat) * c.curvature;
}

double q_eps_bc(double a, GpdParams corrected, double q_tilde, double B_q, std::size_t n, std::size_t N) {
  if (!(a > 0.0 && a < 1.0)) throw InputError("level must be in (0,1)");
  const double a_N = 1.0 - static_cast<double>(N) / static_cast<double>(n);
  if (!(a > a_N)) throw InputError("target level below threshold level (a=" + fmt(a) + " <= a_N=" + fmt(a_N) + ")");
  if (!(1.0 + B_q > 0.0)) throw NumericalError("bias correction out of range; rerun with --no-bias-correction");
  const double x = static_cast<double>(N) / (static_cast<double>(n) * (1.0 - a)) * (1.0 + B_q);
  const double k = corrected.k;
  if (std::abs(k) < 1e-8) return q_tilde + corrected.sigma * std::log(x);
  return q_tilde * (1.0 + corrected.sigma / (k * q_tilde) * (1.0 - std::pow(x, -k)));
}

CorrectedQuantile q_eps_bc(double a, const TailFit& tail) {
  const double q = q_eps(a, tail);
  const double Z = q / tail.sample.q_tilde;
  const double B_q = quantile_bias_term(Z, correction_terms(tail));
  const double value = q_eps_bc(a, tail.correction().params, tail.sample.q_tilde, B_q, tail.sample.n, tail.sample.N);
  return {value, B_q, Z};
}

double es_eps_bc(double q_bc, double k_bc) {
  if (!(k_bc > -1.0)) throw NumericalError("expected shortfall undefined (corrected k <= -1)");
  return q_bc / (1.0 + k_bc);
}

double es_bias_term(double q_bc, double Z_hat, const CorrectionTerms& c) {
  nonzero(c.k, "k");
  const double inv = 1.0 / c.k;
  const double denom = c.d_hat * (1.0 + inv + c.rho) * (1.0 + inv);
  nonzero(denom, "d(1+1/k+rho)(1+1/k)");
  return q_bc * std::pow(Z_hat, c.rho) * c.curvature / denom;
}

double cvar(double m_hat, double h_hat, double q) {
  if (!(h_hat > 0.0)) throw NumericalError("nonpositive variance estimate at query");
  return m_hat + std::sqrt(h_hat) * q;
}

double ces(double m_hat, double h_hat, double es, double B_E) {
  if (!(h_hat > 0.0)) throw NumericalError("nonpositive variance estimate at query");
  return m_hat + std::sqrt(h_hat) * (es + B_E);
}

AsymptoticVariances asymptotic_variances(double k, double rho, double Z) {
  nonzero(1.0 + k, "1+k");
  const Blocks B = blocks(k, rho, Z);
  const double zi = 1.0 / Z;
  AsymptoticVariances out{};

  const double s1 = B.cb.dot(B.Hi * B.cb);
  const double s2 = B.cb.dot(B.Hi * B.b);
  out.sigma1 = clamp_form(k * k * (s1 + k * k * s2 * s2 + 2.0 * k * zi * s2 + zi * zi));
  out.sigma1_bc = clamp_form((B.cq * B.Vb * B.cq.transpose())(0, 0));

  const Eigen::Matrix<double, 1, 5> r2 = B.cq - B.shape_row / (1.0 + k);
  out.sigma2_bc = clamp_form((r2 * B.Vb * r2.transpose())(0, 0));

  const double d = d_coefficient(k, rho);
  const double g = d * (rho + 1.0 / k + 1.0);
  nonzero(g, "d(rho+1/k+1)");
  const double zr = std::pow(Z, rho);
  Eigen::Matrix<double, 1, 5> u1;
  u1 << 0.0, 0.0, zr * k * (-2.0 - 4.0 * k) / g, k * zr / g, 4.0 * k * k * zr / g;
  const Eigen::Matrix<double, 1, 5> r3 = r2 + u1;
  out.sigma3_bc = clamp_form((r3 * B.Vb * r3.transpose())(0, 0));

  const Eigen::RowVector2d cbHi = B.cb.transpose() * B.Hi;
  const Eigen::RowVector2d e2Hi = Eigen::RowVector2d(0.0, 1.0) * B.Hi;
  Eigen::Vector3d eta(cbHi[0], cbHi[1], cbHi.dot(B.b) + 1.0 / (k * Z));
  Eigen::Vector3d theta(e2Hi[0], e2Hi[1], e2Hi.dot(B.b));
  const double a = (k - 1.0) * (2.0 * k - 1.0);
  Eigen::Matrix3d V1;
  V1 << 1.0 / (1.0 - 2.0 * k), -1.0 / a, 0.0,
        -1.0 / a, 2.0 / a, 0.0,
        0.0, 0.0, k * k;
  const Eigen::Vector3d u = k * eta - theta / (1.0 + k);
  out.sigma2 = clamp_form(u.dot(V1 * u));
  return out;
}

Interval asymptotic_ci(double estimate, double variance, std::size_t N, double z) {
  if (!(variance >= 0.0) || !std::isfinite(variance)) throw NumericalError("asymptotic variance is not a finite nonnegative number");
  if (N == 0) throw InputError("confidence interval needs N > 0");
  const double s = z * std::sqrt(variance / static_cast<double>(N));
  const double near = estimate / (1.0 + s);
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (!(1.0 - s > 0.0)) return estimate >= 0.0 ? Interval{near, inf, true} : Interval{-inf, near, true};
  const double far = estimate / (1.0 - s);
  return {std::min(near, far), std::max(near, far), false};
}

CrossoverConstants mse_crossover(double k, double rho, double Z) {
  const AsymptoticVariances v = asymptotic_variances(k, rho, Z);
  const Blocks B = blocks(k, rho, Z);
  const double inv = 1.0 / k;
  const double zr = std::pow(Z, rho);
  const double lead = (-inv - rho) * (zr - 1.0) / rho;
  const double den = 1.0 - inv - rho;
  nonzero(den, "1-1/k-rho");
  nonzero(1.0 + inv + rho, "1+1/k+rho");

  CrossoverConstants out;
  const double m1 = lead + B.cb.dot(B.Hi * Eigen::Vector2d(-inv - rho, inv)) / den;
  nonzero(k * m1, "mu_1 denominator");
  if (v.sigma1_bc >= v.sigma1) out.C1 = std::sqrt(v.sigma1_bc - v.sigma1) / (-k * std::abs(m1));

  const Eigen::RowVector2d shifted = B.cb.transpose() - Eigen::RowVector2d(0.0, 1.0 / (k * (1.0 + k)));
  const double m2 = lead + shifted.dot(B.Hi * Eigen::Vector2d((-inv - rho) / den, inv / den)) +
                    (inv + rho) / (1.0 + inv + rho) * zr;
  nonzero(k * m2, "mu_2 denominator");
  if (v.sigma3_bc >= v.sigma2) out.C2 = std::sqrt(v.sigma3_bc - v.sigma2) / (-k * std::abs(m2));
  return out;
}

RiskEstimate estimate_risk(double a, const TailFit& tail, double m_hat, double h_hat, const RiskOptions& options) {
  if (!(a > 0.0 && a < 1.0)) throw InputError("level must be in (0,1)");
  if (!(h_hat > 0.0)) throw NumericalError("nonpositive variance estimate at query");
  RiskEstimate r;
  r.a = a;
  r.m_hat = m_hat;
  r.h_hat = h_hat;
  r.q_eps = q_eps(a, tail);
  r.es_eps = es_eps(r.q_eps, tail.params.k);
  r.Z_hat = r.q_eps / tail.sample.q_tilde;
  r.cvar_uncorrected = cvar(m_hat, h_hat, r.q_eps);
  r.ces_uncorrected = ces(m_hat, h_hat, r.es_eps);
  r.cvar = r.cvar_uncorrected;
  r.ces = r.ces_uncorrected;
  if (!options.bias_correction) return r;

  const CorrectionTerms terms = correction_terms(tail);
  const BiasCorrection& bc = tail.correction();
  r.B_q = quantile_bias_term(r.Z_hat, terms);
  r.q_eps_bc = q_eps_bc(a, bc.params, tail.sample.q_tilde, *r.B_q, tail.sample.n, tail.sample.N);
  r.es_eps_bc = es_eps_bc(*r.q_eps_bc, bc.params.k);
  r.B_E = es_bias_term(*r.q_eps_bc, r.Z_hat, terms);
  r.cvar = cvar(m_hat, h_hat, *r.q_eps_bc);
  r.ces = ces(m_hat, h_hat, *r.es_eps_bc, *r.B_E);

  const double k_mom = tail.moments->k_mom;
  try {
    if (!(k_mom < 0.0)) throw NumericalError("moment shape estimate is not negative");
    r.variances = asymptotic_variances(k_mom, terms.rho, r.Z_hat);
    r.ci_cvar = asymptotic_ci(r.cvar, r.variances->sigma1_bc, tail.sample.N, options.z);
    r.ci_ces = asymptotic_ci(r.ces, r.variances->sigma3_bc, tail.sample.N, options.z);
    if (r.ci_cvar->one_sided || r.ci_ces->one_sided)
      r.warnings.push_back("confidence interval is one-sided: relative standard error too large");
  } catch (const NumericalError& e) {
    r.variances.reset();
    r.ci_cvar.reset();
    r.ci_ces.reset();
    r.warnings.push_back(std::string("confidence intervals unavailable: ") + e.what());
  }
  return r;
}

}  // namespace evtrisk
