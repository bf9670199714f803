#include "evtrisk/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>

#include "evtrisk/error.hpp"
#include "evtrisk/mc.hpp"
#include "evtrisk/parallel.hpp"
#include "evtrisk/tail.hpp"

namespace evtrisk {

std::size_t BacktestConfig::tail_count() const {
  if (N) return *N;
  return static_cast<std::size_t>(std::lround(std::pow(static_cast<double>(n), 0.79)));
}

void BacktestConfig::validate(std::size_t series_length) const {
  if (n < 100) throw InputError("window length n must be at least 100");
  if (!(n < m)) throw InputError("window length n must be smaller than m");
  if (series_length < m) {
    throw InputError("series has " + std::to_string(series_length) + " observations, m = " + std::to_string(m) +
                     " required");
  }
  if (a_levels.empty()) throw InputError("at least one level required");
  const std::size_t Nt = tail_count();
  if (Nt < 10 || Nt >= n / 2) throw InputError("tail count N must lie in [10, n/2)");
  for (double a : a_levels) {
    if (!(a > 0.0 && a < 1.0)) throw InputError("level must be in (0,1)");
    if (!(a > 1.0 - static_cast<double>(Nt) / static_cast<double>(n))) {
      throw InputError("level " + std::to_string(a) + " is not above 1 - N/n");
    }
  }
  if (B_boot < 1) throw InputError("B_boot must be positive");
}

ForecastStream rolling_forecast(const ReturnSeries& series, const BacktestConfig& cfg, unsigned threads) {
  cfg.validate(series.values.size());
  const std::size_t steps = cfg.m - cfg.n;
  const std::size_t L = cfg.a_levels.size();

  PipelineOptions popt = cfg.pipeline;
  popt.N = cfg.tail_count();
  popt.tail.bias_correction = cfg.bias_corrected;
  RiskOptions ropt;
  ropt.bias_correction = cfg.bias_corrected;

  ForecastStream out;
  out.steps.resize(steps);
  std::vector<std::exception_ptr> failure(steps);

  parallel_for(steps, threads, [&](std::size_t j) {
    ForecastStep& s = out.steps[j];
    s.index = j + cfg.n;
    s.x = series.values[j + cfg.n - 1];
    s.realized = series.values[j + cfg.n];
    try {
      ReturnSeries window;
      window.kind = series.kind;
      window.values.assign(series.values.begin() + static_cast<std::ptrdiff_t>(j),
                           series.values.begin() + static_cast<std::ptrdiff_t>(j + cfg.n));
      const FittedModel model = fit_model(window, popt);
      Eigen::VectorXd x(1);
      x(0) = s.x;
      s.cvar.resize(L);
      s.ces.resize(L);
      for (std::size_t l = 0; l < L; ++l) {
        const RiskEstimate r = forecast(model, cfg.a_levels[l], x, ropt);
        s.sqrt_h = std::sqrt(r.h_hat);
        s.cvar[l] = r.cvar;
        s.ces[l] = r.ces;
      }
    } catch (const InputError&) {
      throw;
    } catch (const std::exception& e) {
      failure[j] = std::current_exception();
      s.error = e.what();
    }
  });

  for (std::size_t j = 0; j < steps; ++j) {
    if (!failure[j]) continue;
    if (j == 0) std::rethrow_exception(failure[j]);
    ForecastStep& s = out.steps[j];
    const ForecastStep& prev = out.steps[j - 1];
    s.sqrt_h = prev.sqrt_h;
    s.cvar = prev.cvar;
    s.ces = prev.ces;
    s.carried = true;
    ++out.carried;
  }
  return out;
}

CoverageTest coverage_test(std::size_t W, std::size_t T, double a) {
  if (T == 0) throw InputError("coverage test needs a nonempty violation sequence");
  if (!(a > 0.0 && a < 1.0)) throw InputError("level must be in (0,1)");
  CoverageTest c;
  c.W = W;
  c.expected = static_cast<double>(T) * (1.0 - a);
  c.z = (static_cast<double>(W) - c.expected) / std::sqrt(c.expected * a);
  c.p = std::min(1.0, std::erfc(std::abs(c.z) / std::sqrt(2.0)));
  return c;
}

CoverageTest coverage_test(std::span<const char> violations, double a) {
  const auto W = static_cast<std::size_t>(std::count_if(violations.begin(), violations.end(),
                                                        [](char v) { return v != 0; }));
  return coverage_test(W, violations.size(), a);
}

Durations violation_durations(std::span<const char> violations) {
  Durations d;
  std::optional<std::size_t> last;
  for (std::size_t t = 0; t < violations.size(); ++t) {
    if (!violations[t]) continue;
    if (!last) {
      if (t > 0) {
        d.length.push_back(static_cast<double>(t + 1));
        d.censored.push_back(1);
      }
    } else {
      d.length.push_back(static_cast<double>(t - *last));
      d.censored.push_back(0);
    }
    last = t;
  }
  if (last && *last + 1 < violations.size()) {
    d.length.push_back(static_cast<double>(violations.size() - 1 - *last));
    d.censored.push_back(1);
  }
  return d;
}

namespace {

// Weibull log-likelihood with the scale profiled out: a^b = n_u / sum d^b.
struct WeibullProfile {
  const Durations& d;
  double n_u = 0.0;
  double sum_log_unc = 0.0;

  explicit WeibullProfile(const Durations& dd) : d(dd) {
    for (std::size_t i = 0; i < d.length.size(); ++i) {
      if (!d.censored[i]) {
        n_u += 1.0;
        sum_log_unc += std::log(d.length[i]);
      }
    }
  }

  // log sum d^b and the d^b-weighted mean and variance of log d
  void moments(double b, double& lse, double& mean, double& var) const {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : d.length) mx = std::max(mx, b * std::log(x));
    double s = 0.0, s1 = 0.0, s2 = 0.0;
    for (double x : d.length) {
      const double w = std::exp(b * std::log(x) - mx);
      const double l = std::log(x);
      s += w;
      s1 += w * l;
      s2 += w * l * l;
    }
    lse = mx + std::log(s);
    mean = s1 / s;
    var = std::max(0.0, s2 / s - mean * mean);
  }

  double loglik(double b) const {
    double lse, mean, var;
    moments(b, lse, mean, var);
    return n_u * (std::log(n_u) - lse) + n_u * std::log(b) + (b - 1.0) * sum_log_unc - n_u;
  }

  // strictly decreasing in b
  double score(double b, double& slope) const {
    double lse, mean, var;
    moments(b, lse, mean, var);
    slope = -n_u * var - n_u / (b * b);
    return -n_u * mean + n_u / b + sum_log_unc;
  }
};

constexpr double kShapeLo = 0.01;
constexpr double kShapeHi = 100.0;

std::optional<double> maximize_shape(const WeibullProfile& prof, bool& at_bound) {
  double slope;
  double lo = kShapeLo, hi = kShapeHi;
  const double s_lo = prof.score(lo, slope);
  const double s_hi = prof.score(hi, slope);
  if (!std::isfinite(s_lo) || !std::isfinite(s_hi)) return std::nullopt;
  at_bound = false;
  if (s_lo <= 0.0) {
    at_bound = true;
    return lo;
  }
  if (s_hi >= 0.0) {
    at_bound = true;
    return hi;
  }
  double b = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double s = prof.score(b, slope);
    if (!std::isfinite(s)) return std::nullopt;
    if (s > 0.0) lo = b; else hi = b;
    if (hi - lo <= 1e-12 * hi) return b;
    double next = b - s / slope;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - b) <= 1e-12 * b) return next;
    b = next;
  }
  return std::nullopt;
}

double chi2_sf(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), x));
}

}  // namespace

DurationTests duration_tests(std::span<const char> violations, double a) {
  if (!(a > 0.0 && a < 1.0)) throw InputError("level must be in (0,1)");
  DurationTests out;
  const auto hits = std::count_if(violations.begin(), violations.end(), [](char v) { return v != 0; });
  if (hits < 2) {
    out.note = "fewer than two violations";
    return out;
  }
  const Durations d = violation_durations(violations);
  const WeibullProfile prof(d);
  if (prof.n_u < 1.0) {
    out.note = "no complete durations";
    return out;
  }
  bool at_bound = false;
  const auto b = maximize_shape(prof, at_bound);
  if (!b) {
    out.note = "shape optimizer failed";
    return out;
  }
  const double l1 = prof.loglik(*b);
  const double l_exp = prof.loglik(1.0);
  double total = 0.0;
  for (double x : d.length) total += x;
  const double p = 1.0 - a;
  const double l_cc = prof.n_u * std::log(p) - p * total;
  if (!std::isfinite(l1) || !std::isfinite(l_exp) || !std::isfinite(l_cc)) {
    out.note = "log-likelihood not finite";
    return out;
  }
  out.shape = *b;
  out.shape_at_bound = at_bound;
  out.T_ind = std::max(0.0, 2.0 * (l1 - l_exp));
  out.T_cc = std::max(0.0, 2.0 * (l1 - l_cc));
  out.p_ind = chi2_sf(*out.T_ind, 1.0);
  out.p_cc = chi2_sf(*out.T_cc, 2.0);
  return out;
}

namespace {

double t_statistic(double mean, double sd, std::size_t n) {
  if (sd > 0.0) return mean / (sd / std::sqrt(static_cast<double>(n)));
  if (mean > 0.0) return std::numeric_limits<double>::infinity();
  if (mean < 0.0) return -std::numeric_limits<double>::infinity();
  return 0.0;
}

void mean_sd(std::span<const double> v, double& mean, double& sd) {
  const double n = static_cast<double>(v.size());
  mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / (n - 1.0));
}

}  // namespace

EsBootstrapTest es_bootstrap_test(std::span<const double> residuals, std::size_t B_boot, std::uint64_t seed) {
  EsBootstrapTest out;
  out.count = residuals.size();
  if (residuals.size() < 2) return out;
  if (B_boot < 1) throw InputError("B_boot must be positive");
  for (double r : residuals) {
    if (!std::isfinite(r)) throw InputError("ES residuals must be finite");
  }
  const std::size_t n = residuals.size();
  double mean, sd;
  mean_sd(residuals, mean, sd);
  const double scale = std::max(std::abs(mean), 1.0);
  if (sd <= 1e-14 * scale) {
    out.zero_variance = true;
    out.t_obs = t_statistic(mean, 0.0, n);
    out.p = mean > 0.0 ? 1.0 / static_cast<double>(B_boot + 1) : 1.0;
    return out;
  }
  const double t_obs = t_statistic(mean, sd, n);
  out.t_obs = t_obs;

  std::vector<double> centered(n), draw(n);
  for (std::size_t i = 0; i < n; ++i) centered[i] = residuals[i] - mean;
  auto gen = substream(seed, 0);
  double above = 0.0;
  for (std::size_t b = 0; b < B_boot; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = std::min(n - 1, static_cast<std::size_t>(open_uniform(gen) * static_cast<double>(n)));
      draw[i] = centered[k];
    }
    double m, s;
    mean_sd(draw, m, s);
    const double t = t_statistic(m, s > 1e-14 * scale ? s : 0.0, n);
    if (t > t_obs) above += 1.0;
    else if (t == t_obs) above += 0.5;
  }
  out.p = std::min(1.0, (1.0 + above) / static_cast<double>(B_boot + 1));
  return out;
}

BacktestReport run_backtest(const ReturnSeries& series, const BacktestConfig& cfg, unsigned threads) {
  BacktestReport rep;
  rep.config = cfg;
  rep.forecasts = rolling_forecast(series, cfg, threads);
  const auto& steps = rep.forecasts.steps;
  for (std::size_t l = 0; l < cfg.a_levels.size(); ++l) {
    LevelReport lr;
    lr.a = cfg.a_levels[l];
    std::vector<char> hit(steps.size());
    std::vector<double> resid;
    for (std::size_t j = 0; j < steps.size(); ++j) {
      hit[j] = steps[j].realized > steps[j].cvar[l] ? 1 : 0;
      if (hit[j]) {
        lr.violation_index.push_back(steps[j].index);
        resid.push_back((steps[j].realized - steps[j].ces[l]) / steps[j].sqrt_h);
      }
    }
    lr.coverage = coverage_test(hit, lr.a);
    lr.durations = duration_tests(hit, lr.a);
    lr.es = es_bootstrap_test(resid, cfg.B_boot, cfg.seed + l);
    rep.levels.push_back(std::move(lr));
  }
  return rep;
}

}  // namespace evtrisk
