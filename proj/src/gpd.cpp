#include "evtrisk/gpd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "evtrisk/error.hpp"

namespace evtrisk {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kShapeBound = 0.9;
constexpr double kSeriesCutoff = 0.1;

// log1p(-x) / (-x), equal to 1 at x = 0.
double log1p_ratio(double x) { return x == 0.0 ? 1.0 : std::log1p(-x) / (-x); }

// B = -log(1 - kw)/k^2 - w/(k (1 - kw)) and its k-derivative. Both cancel
// catastrophically for small kw, where the power series in x = kw is used.
void shape_terms(double k, double w, double* B, double* Bk) {
  const double x = k * w;
  if (std::abs(x) < kSeriesCutoff) {
    double sb = 0.0, sbk = 0.0, xp = 1.0;
    for (int j = 0; j < 60; ++j) {
      double jj = j;
      sb += xp * (jj + 1.0) / (jj + 2.0);
      // Term j+1 of B_k: (j+1) x^j (j+2)/(j+3).
      sbk += (jj + 1.0) * xp * (jj + 2.0) / (jj + 3.0);
      xp *= x;
      if (std::abs(xp) < 1e-20) break;
    }
    *B = -w * w * sb;
    *Bk = -w * w * w * sbk;
    return;
  }
  const double t = 1.0 - x;
  const double lt = std::log1p(-x);
  *B = -lt / (k * k) - w / (k * t);
  *Bk = 2.0 * lt / (k * k * k) + 2.0 * w / (k * k * t) - w * w / (k * t * t);
}

bool in_domain(std::span<const double> z, GpdParams p) {
  if (!(p.sigma > 0.0) || !(std::abs(p.k) < kShapeBound)) return false;
  if (p.k <= 0.0) return true;
  double zmax = *std::max_element(z.begin(), z.end());
  return 1.0 - p.k * zmax / p.sigma > 0.0;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

void require_no_pole(double value, const char* factor, double k, double rho = std::numeric_limits<double>::quiet_NaN()) {
  if (std::abs(value) < 1e-12 || !std::isfinite(value)) {
    std::string where = "k=" + fmt(k) + (std::isnan(rho) ? "" : ", rho=" + fmt(rho));
    throw PoleError(std::string("pole: factor ") + factor + " vanishes at " + where);
  }
}

}  // namespace

double gpd_logpdf(double z, GpdParams p) {
  if (!(p.sigma > 0.0)) throw InputError("GPD scale must be positive");
  if (z < 0.0) return kNegInf;
  if (std::abs(p.k) < 1e-8) return -std::log(p.sigma) - z / p.sigma;
  double x = p.k * z / p.sigma;
  if (!(x < 1.0)) return kNegInf;
  return -std::log(p.sigma) + (1.0 / p.k - 1.0) * std::log1p(-x);
}

GpdLogLik gpd_loglik(std::span<const double> z, GpdParams p) {
  GpdLogLik out{0.0, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero()};
  const double k = p.k;
  const double tau = std::log(p.sigma);
  for (double zi : z) {
    const double w = zi / p.sigma;
    const double x = k * w;
    const double t = 1.0 - x;
    if (!(t > 0.0) || zi < 0.0) {
      out.value = kNegInf;
      out.gradient.setZero();
      out.hessian.setZero();
      return out;
    }
    double B = 0.0, Bk = 0.0;
    shape_terms(k, w, &B, &Bk);
    out.value += -tau - w * log1p_ratio(x) - std::log1p(-x);
    out.gradient[0] += -1.0 + w * (1.0 - k) / t;
    out.gradient[1] += B + w / t;
    out.hessian(0, 0) += -w * (1.0 - k) / t - w * w * k * (1.0 - k) / (t * t);
    out.hessian(0, 1) += -w * (1.0 - w) / (t * t);
    out.hessian(1, 1) += Bk + w * w / (t * t);
  }
  out.hessian(1, 0) = out.hessian(0, 1);
  return out;
}

GpdMle gpd_mle(std::span<const double> z, GpdParams start) {
  if (z.size() < 5)
    throw InputError("GPD fit needs at least 5 exceedances, got " + std::to_string(z.size()));
  for (double v : z)
    if (!(v > 0.0) || !std::isfinite(v)) throw InputError("GPD exceedances must be positive and finite");
  if (!in_domain(z, start)) throw InputError("GPD starting point outside the parameter domain");

  GpdMle out;
  out.start = start;
  GpdParams p = start;
  GpdLogLik L = gpd_loglik(z, p);
  out.start_loglik = L.value;

  auto natural_gradient = [](const GpdLogLik& l, GpdParams q) {
    return Eigen::Vector2d(l.gradient[0] / q.sigma, l.gradient[1]);
  };

  bool converged = false;
  int iter = 0;
  for (; iter < 200; ++iter) {
    if (natural_gradient(L, p).cwiseAbs().maxCoeff() < 1e-9) {
      converged = true;
      break;
    }
    const Eigen::Vector2d g = L.gradient;
    const Eigen::Matrix2d negH = -L.hessian;
    Eigen::Vector2d step;
    Eigen::LLT<Eigen::Matrix2d> llt(negH);
    if (llt.info() == Eigen::Success && negH.determinant() > 0.0) {
      step = llt.solve(g);
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(negH);
      double shift = -eig.eigenvalues().minCoeff() + 1e-6 * (1.0 + negH.cwiseAbs().maxCoeff());
      step = (negH + shift * Eigen::Matrix2d::Identity()).ldlt().solve(g);
    }
    const double slope = g.dot(step);
    const double noise = 1e-13 * (1.0 + std::abs(L.value)) * std::sqrt(static_cast<double>(z.size()));

    bool accepted = false;
    for (double alpha = 1.0; alpha > 1e-14; alpha *= 0.5) {
      GpdParams trial{std::exp(std::log(p.sigma) + alpha * step[0]), p.k + alpha * step[1]};
      if (!in_domain(z, trial)) continue;
      GpdLogLik Lt = gpd_loglik(z, trial);
      // Near the optimum the predicted gain drops below the rounding noise of the
      // summed log-likelihood; such steps are judged by the gradient instead.
      const bool within_noise = std::abs(Lt.value - L.value) <= noise &&
                                natural_gradient(Lt, trial).cwiseAbs().maxCoeff() <
                                    natural_gradient(L, p).cwiseAbs().maxCoeff();
      if (Lt.value >= L.value + 1e-4 * alpha * slope || within_noise) {
        p = trial;
        L = Lt;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No representable ascent left: the optimum is resolved to working precision.
      if (std::abs(slope) < 1e-12 * (1.0 + std::abs(L.value))) {
        converged = true;
        break;
      }
      throw ConvergenceError("GPD likelihood line search failed at sigma=" + fmt(p.sigma) + ", k=" + fmt(p.k));
    }
  }
  if (!converged) throw ConvergenceError("GPD maximum likelihood did not converge in 200 iterations");

  out.params = p;
  out.loglik = L.value;
  out.iterations = iter;
  out.gradient = natural_gradient(L, p);
  const double s = p.sigma;
  out.hessian(0, 0) = (L.hessian(0, 0) - L.gradient[0]) / (s * s);
  out.hessian(0, 1) = out.hessian(1, 0) = L.hessian(0, 1) / s;
  out.hessian(1, 1) = L.hessian(1, 1);
  if (p.k >= 0.0) out.warnings.push_back("fitted shape k=" + fmt(p.k) + " is not in the heavy-tail range k < 0");
  if (std::abs(p.k) > 0.89) out.warnings.push_back("fitted shape k=" + fmt(p.k) + " is at the solver bound");
  return out;
}

GpdMle gpd_mle(const TailSample& tail) {
  const auto& z = tail.exceedances;
  if (z.size() < 5)
    throw InputError("GPD fit needs at least 5 exceedances, got " + std::to_string(z.size()));
  GpdParams fallback{std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(z.size()), -0.1};
  GpdParams start = fallback;
  if (tail.q_tilde > 0.0) {
    MomentStats m = moment_stats(tail);
    GpdParams mom{-m.k_mom * tail.q_tilde, m.k_mom};
    if (mom.sigma > 0.0 && std::abs(mom.k) < 0.85 && in_domain(z, mom)) start = mom;
  }
  return gpd_mle(z, start);
}

MomentStats moment_stats(std::span<const double> upper, double threshold) {
  if (!(threshold > 0.0)) throw NumericalError("moment statistics undefined for nonpositive threshold");
  if (upper.empty()) throw NumericalError("moment statistics need at least one tail value");
  double s1 = 0.0, s2 = 0.0;
  for (double e : upper) {
    if (!(e > 0.0)) throw NumericalError("moment statistics undefined for nonpositive threshold");
    double l = std::log(e / threshold);
    s1 += l;
    s2 += l * l;
  }
  double m = static_cast<double>(upper.size());
  return {-s1 / m, s2 / m};
}

MomentStats moment_stats(const TailSample& tail) { return moment_stats(tail.upper(), tail.q_tilde); }

std::pair<std::size_t, std::size_t> rho_tail_counts(std::size_t N, std::size_t n, double c) {
  if (!(c > 0.0)) throw InputError("rho constant c must be positive");
  double logn = std::log(static_cast<double>(n));
  auto full = static_cast<std::size_t>(std::round(c * static_cast<double>(N) * logn));
  auto half = static_cast<std::size_t>(std::round(0.5 * c * static_cast<double>(N) * logn));
  if (full >= n)
    throw InputError("rho tail count N(c)=" + std::to_string(full) + " is not below n=" + std::to_string(n) +
                     "; use a smaller c for the rho estimator");
  if (half < 10)
    throw InputError("rho tail count N(c/2)=" + std::to_string(half) + " is below 10; use a larger c");
  return {full, half};
}

RhoEstimate rho_from_moments(MomentStats at_c, MomentStats at_half_c) {
  RhoEstimate r{kRhoFallback, std::numeric_limits<double>::quiet_NaN(), RhoEstimate::Status::fallback, 0, 0, {}};
  const double arg = at_half_c.curvature() / at_c.curvature();
  if (!(arg > 0.0) || !std::isfinite(arg) || at_c.k_mom == 0.0) {
    r.note = "rho estimate undefined (nonpositive log argument); using fallback -2";
    return r;
  }
  r.raw = -std::log(arg) / (at_c.k_mom * std::log(2.0));
  if (!std::isfinite(r.raw)) {
    r.note = "rho estimate not finite; using fallback -2";
    return r;
  }
  r.value = std::clamp(r.raw, kRhoMin, kRhoMax);
  if (r.value != r.raw) {
    r.status = RhoEstimate::Status::clamped;
    r.note = "rho estimate " + fmt(r.raw) + " clamped to " + fmt(r.value);
  } else {
    r.status = RhoEstimate::Status::estimated;
  }
  return r;
}

RhoEstimate rho_hat(std::span<const double> sorted, std::size_t N, double c, std::optional<double> h3) {
  const std::size_t n = sorted.size();
  auto [full, half] = rho_tail_counts(N, n, c);
  auto stats_at = [&](std::size_t count) {
    double thr;
    std::span<const double> upper;
    if (h3) {
      thr = smoothed_quantile(1.0 - static_cast<double>(count) / static_cast<double>(n), sorted, *h3);
      auto first = std::upper_bound(sorted.begin(), sorted.end(), thr);
      upper = sorted.subspan(static_cast<std::size_t>(first - sorted.begin()));
    } else {
      thr = sorted[n - count - 1];
      upper = sorted.subspan(n - count);
    }
    return moment_stats(upper, thr);
  };
  RhoEstimate r;
  try {
    r = rho_from_moments(stats_at(full), stats_at(half));
  } catch (const NumericalError& e) {
    r = RhoEstimate{kRhoFallback, std::numeric_limits<double>::quiet_NaN(), RhoEstimate::Status::fallback, 0, 0, {}};
    r.note = std::string("rho estimate unavailable (") + e.what() + "); using fallback -2";
  }
  r.N_c = full;
  r.N_half_c = half;
  return r;
}

Eigen::Matrix2d H_matrix(double k) {
  require_no_pole(1.0 - 2.0 * k, "1-2k", k);
  require_no_pole(1.0 - k, "1-k", k);
  Eigen::Matrix2d h;
  h << 1.0 - k, -1.0, -1.0, 2.0;
  return h / ((1.0 - 2.0 * k) * (1.0 - k));
}

Eigen::Matrix2d H_inverse(double k) {
  require_no_pole(1.0 - 2.0 * k, "1-2k", k);
  Eigen::Matrix2d h;
  h << 2.0, 1.0, 1.0, 1.0 - k;
  return (1.0 - k) * h;
}

Eigen::Matrix2d V2_matrix(double k) {
  require_no_pole(k, "k", k);
  require_no_pole(k - 1.0, "k-1", k);
  require_no_pole(2.0 * k - 1.0, "2k-1", k);
  const double km1 = k - 1.0, tkm1 = 2.0 * k - 1.0;
  const double off = -1.0 / (k * km1);
  Eigen::Matrix2d v;
  v << (k * k - 4.0 * k + 2.0) / (tkm1 * tkm1), off,
       off, (2.0 * k * k * k - 2.0 * k * k + 2.0 * k - 1.0) / (k * k * km1 * km1 * tkm1);
  return v;
}

Eigen::Matrix<double, 5, 5> Vb_matrix(double k) {
  require_no_pole(1.0 - k, "1-k", k);
  require_no_pole(1.0 - 2.0 * k, "1-2k", k);
  const double a = 1.0 - k, b = 1.0 - 2.0 * k;
  const double v11 = 1.0 / b;
  const double v12 = -1.0 / (a * b);
  const double v22 = 2.0 / (a * b);
  const double v14 = (4.0 * k * k - 2.0 * k * k * k) / (a * a);
  const double v24 = (4.0 * k * k * k - 6.0 * k * k) / (a * a);
  const double v15 = -k / a;
  const double v25 = k / a;
  const double k2 = k * k, k3 = k2 * k, k4 = k3 * k;
  Eigen::Matrix<double, 5, 5> v;
  v << v11, v12, 0.0, v14, v15,
       v12, v22, 0.0, v24, v25,
       0.0, 0.0, k2, 0.0, 0.0,
       v14, v24, 0.0, 20.0 * k4, -4.0 * k3,
       v15, v25, 0.0, -4.0 * k3, k2;
  return v;
}

Eigen::Matrix<double, 2, 5> A_matrix(double k, double rho) {
  require_no_pole(k, "k", k, rho);
  require_no_pole(rho, "rho", k, rho);
  require_no_pole(1.0 - k, "1-k", k, rho);
  require_no_pole(1.0 - 2.0 * k, "1-2k", k, rho);
  require_no_pole((1.0 - rho) * k - 1.0, "(1-rho)k-1", k, rho);
  const double D = rho * ((1.0 - rho) * k - 1.0);
  const double e = 1.0 + rho * k;
  const double k2 = k * k, k3 = k2 * k;
  Eigen::Matrix<double, 2, 5> A;
  A << 1.0, 0.0,
       (1.0 - k) / (k * (1.0 - 2.0 * k)) + (1.0 + 2.0 * k) * e * e / (k3 * D),
       -e * e / (2.0 * k3 * D),
       -2.0 * e * e / (k2 * D),
       0.0, 1.0,
       -1.0 / ((1.0 - k) * (1.0 - 2.0 * k)) - (1.0 + 2.0 * k) * e / (k3 * D),
       e / (2.0 * k3 * D),
       2.0 * e / (k2 * D);
  return A;
}

double d_coefficient(double k, double rho) {
  const double e = 1.0 + rho * k;
  if (std::abs(e) < 1e-6) throw PoleError("pole: factor 1+rho*k vanishes at k=" + fmt(k) + ", rho=" + fmt(rho));
  return 2.0 * k * k * k * k * rho / (e * e);
}

BiasCorrection bias_correct_params(GpdParams fitted, MomentStats moments, double rho, BiasAnchor anchor) {
  const double k = anchor == BiasAnchor::moment_shape ? moments.k_mom : fitted.k;
  require_no_pole(k, "k", k, rho);
  const double d = d_coefficient(k, rho);
  require_no_pole(d, "d", k, rho);
  const double inv = 1.0 / k;
  const double denom = 1.0 - inv - rho;
  require_no_pole(denom, "1-1/k-rho", k, rho);
  require_no_pole(-inv - rho, "-1/k-rho", k, rho);

  BiasCorrection bc;
  bc.anchor_k = k;
  bc.d_hat = d;
  bc.step = moments.curvature() / (denom * d);
  const Eigen::Vector2d w(1.0, inv / (-inv - rho));
  const Eigen::Vector2d hw = H_inverse(k) * w;
  bc.params.k = fitted.k - bc.step * hw[1];
  bc.params.sigma = fitted.sigma * (1.0 - bc.step * hw[0]);
  return bc;
}

const BiasCorrection& TailFit::correction() const {
  if (!bc) throw InputError("bias correction was not computed for this fit");
  return *bc;
}

TailFit fit_tail(TailSample sample, const TailFitOptions& options) {
  TailFit f;
  f.mle = gpd_mle(sample);
  f.params = f.mle.params;
  f.warnings = f.mle.warnings;
  if (sample.q_tilde > 0.0) f.moments = moment_stats(sample);

  if (options.bias_correction) {
    if (!f.moments) throw NumericalError("moment statistics undefined for nonpositive threshold");
    if (options.rho) {
      if (!(*options.rho < 0.0)) throw InputError("rho must be negative");
      f.rho = RhoEstimate{*options.rho, *options.rho, RhoEstimate::Status::user, 0, 0, {}};
    } else {
      std::optional<double> h3;
      if (sample.rule == ThresholdRule::smoothed) h3 = sample.h3;
      f.rho = rho_hat(sample.residuals_sorted, sample.N, options.rho_c, h3);
      if (!f.rho->note.empty()) f.warnings.push_back(f.rho->note);
    }
    f.bc = bias_correct_params(f.params, *f.moments, f.rho->value, options.anchor);
    if (!(f.bc->params.sigma > 0.0))
      throw NumericalError("bias-corrected scale is not positive; rerun with --no-bias-correction");
  }
  f.sample = std::move(sample);
  return f;
}

}  // namespace evtrisk
