#include "evtrisk/mc.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "evtrisk/error.hpp"
#include "evtrisk/parallel.hpp"
#include "evtrisk/pipeline.hpp"
#include "evtrisk/risk.hpp"

namespace evtrisk {

void McDesign::validate() const {
  if (n < 200) throw InputError("mc design needs n >= 200");
  if (reps < 1) throw InputError("mc design needs reps >= 1");
  if (!(v > 2.0)) throw InputError("mc design needs v > 2 for unit-variance innovations");
  if (!(theta >= 0.0 && theta < 1.0)) throw InputError("mc design needs theta in [0,1)");
  if (!(c > 0.0)) throw InputError("mc design needs c > 0");
  for (double a : a_levels)
    if (!(a > 0.0 && a < 1.0)) throw InputError("level must be in (0,1)");
}

std::string McDesign::label() const {
  std::ostringstream os;
  os << "n=" << n << " " << (variant == Heteroskedasticity::h1 ? "h1" : "h2") << " theta=" << theta << " v=" << v;
  return os.str();
}

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

double open_uniform(std::mt19937_64& gen) {
  constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
  return (static_cast<double>(gen() >> 11) + 0.5) * scale;
}

StandardizedT::StandardizedT(double v) : v_(v), scale_(0.0) {
  if (!(v > 2.0)) throw InputError("standardized Student-t needs v > 2");
  scale_ = std::sqrt(v / (v - 2.0));
}

double StandardizedT::quantile(double a) const {
  return boost::math::quantile(boost::math::students_t(v_), a) / scale_;
}

double StandardizedT::cdf(double x) const { return boost::math::cdf(boost::math::students_t(v_), x * scale_); }

double StandardizedT::pdf(double x) const {
  return boost::math::pdf(boost::math::students_t(v_), x * scale_) * scale_;
}

double StandardizedT::tail_mean(double q) const {
  const boost::math::students_t t(v_);
  const double tq = q * scale_;
  const double survival = boost::math::cdf(boost::math::complement(t, tq));
  return (v_ + tq * tq) / (v_ - 1.0) * boost::math::pdf(t, tq) / survival / scale_;
}

double location_function(double y) { return std::sin(0.5 * y); }

double variance_function(Heteroskedasticity variant, double y) {
  if (variant == Heteroskedasticity::h1) return 1.0 + 0.01 * y * y + 0.5 * std::sin(y);
  return 1.0 - 0.9 * std::exp(-2.0 * y * y);
}

namespace {

double next_variance(const McDesign& d, double y_prev, double h_prev) {
  double h = variance_function(d.variant, y_prev) + d.theta * h_prev;
  if (d.variant == Heteroskedasticity::h2) h = std::max(h, 1e-8);
  return h;
}

}  // namespace

SimulatedPath simulate_path(const McDesign& d, std::span<const double> eps) {
  const std::size_t total = d.burn_in + d.n + 1;
  if (eps.size() != total) throw InputError("simulate_path needs burn_in + n + 1 innovations");
  SimulatedPath p;
  p.series.kind = ReturnKind::raw;
  p.series.values.reserve(d.n + 1);
  p.innovations.reserve(d.n + 1);
  p.variance.reserve(d.n + 1);
  double y = 0.0, h = 0.0;
  for (std::size_t t = 0; t < total; ++t) {
    h = next_variance(d, y, h);
    y = location_function(y) + std::sqrt(h) * eps[t];
    if (t >= d.burn_in) {
      p.series.values.push_back(y);
      p.innovations.push_back(eps[t]);
      p.variance.push_back(h);
    }
  }
  p.m_next = location_function(y);
  p.h_next = next_variance(d, y, h);
  return p;
}

SimulatedPath simulate_path(const McDesign& d, std::uint64_t replication) {
  auto gen = substream(d.seed, replication);
  const StandardizedT dist(d.v);
  std::vector<double> eps(d.burn_in + d.n + 1);
  for (auto& e : eps) e = dist.draw(gen);
  return simulate_path(d, eps);
}

TrueRisk true_risk(double m, double h, double a, const StandardizedT& dist) {
  if (!(a > 0.0 && a < 1.0)) throw InputError("level must be in (0,1)");
  if (!(h > 0.0)) throw InputError("true risk needs a positive conditional variance");
  const double q = dist.quantile(a);
  return {m + std::sqrt(h) * q, m + std::sqrt(h) * dist.tail_mean(q)};
}

ErrorMoments error_moments(std::span<const double> est, std::span<const double> truth, double trim) {
  if (est.size() != truth.size() || est.empty()) throw InputError("error_moments needs matching nonempty inputs");
  std::vector<std::size_t> idx(est.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return est[a] < est[b]; });
  const auto drop = static_cast<std::size_t>(std::floor(trim * static_cast<double>(est.size())));
  const std::size_t lo = drop, hi = est.size() - drop;
  if (hi <= lo) throw InputError("trimming removes every replication");

  const double m = static_cast<double>(hi - lo);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    double e = est[idx[i]] - truth[idx[i]];
    sum += e;
    sq += e * e;
  }
  const double B = sum / m;
  double ss = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    double e = est[idx[i]] - truth[idx[i]] - B;
    ss += e * e;
  }
  return {B, std::sqrt(ss / m), std::sqrt(sq / m)};
}

namespace {

struct Slot {
  std::string name;
  std::string quantity;
  std::optional<double> a;
  bool has_ci;
};

struct Replication {
  bool ok = false;
  std::string error;
  std::vector<double> value;
  std::vector<double> truth;
  std::vector<char> covered;
};

bool covers(const std::optional<Interval>& ci, double truth) {
  return ci && ci->lower <= truth && truth <= ci->upper;
}

}  // namespace

McResult run_experiment(const McDesign& design, unsigned threads) {
  design.validate();
  const StandardizedT dist(design.v);
  const std::size_t N = choose_N(design.n, design.c);
  const double k0 = -1.0 / design.v;
  const double a_N = 1.0 - static_cast<double>(N) / static_cast<double>(design.n);
  const double sigma_N = -k0 * dist.quantile(a_N);

  std::vector<Slot> slots;
  for (const char* family : {"smith", "tilde"}) {
    for (const char* suffix : {"", "_bc"}) {
      slots.push_back({std::string("sigma_") + family + suffix, "sigma", std::nullopt, false});
      slots.push_back({std::string("k_") + family + suffix, "k", std::nullopt, false});
    }
  }
  for (double a : design.a_levels) {
    for (const char* q : {"q", "E"}) {
      for (const char* family : {"hat", "smith"}) {
        slots.push_back({std::string(q) + "_" + family, q, a, false});
        slots.push_back({std::string(q) + "_" + family + "_bc", q, a, true});
      }
    }
  }

  PipelineOptions popts;
  popts.c = design.c;
  popts.tail.anchor = design.anchor;
  TailFitOptions topts;
  topts.anchor = design.anchor;

  std::vector<Replication> reps(design.reps);
  parallel_for(design.reps, threads, [&](std::size_t r) {
    Replication& out = reps[r];
    out.value.assign(slots.size(), 0.0);
    out.truth.assign(slots.size(), 0.0);
    out.covered.assign(slots.size(), 0);
    try {
      const SimulatedPath path = simulate_path(design, static_cast<std::uint64_t>(r));
      const FittedModel model = fit_model(path.series, popts);
      const std::vector<double> eps(path.innovations.begin() + 1, path.innovations.end());
      const TailFit smith = fit_tail(extract_tail_empirical(eps, N), topts);

      std::size_t s = 0;
      auto put = [&](double value, double truth) {
        out.value[s] = value;
        out.truth[s] = truth;
        ++s;
      };
      for (const TailFit* f : {&smith, &model.tail}) {
        put(f->params.sigma, sigma_N);
        put(f->params.k, k0);
        put(f->correction().params.sigma, sigma_N);
        put(f->correction().params.k, k0);
      }
      const Eigen::VectorXd x = model.fit.last_state();
      for (double a : design.a_levels) {
        const TrueRisk truth = true_risk(path.m_next, path.h_next, a, dist);
        const RiskEstimate hat = forecast(model, a, x);
        const RiskEstimate sm = estimate_risk(a, smith, path.m_next, path.h_next);
        put(hat.cvar_uncorrected, truth.q);
        out.covered[s] = covers(hat.ci_cvar, truth.q);
        put(hat.cvar, truth.q);
        put(sm.cvar_uncorrected, truth.q);
        out.covered[s] = covers(sm.ci_cvar, truth.q);
        put(sm.cvar, truth.q);
        put(hat.ces_uncorrected, truth.E);
        out.covered[s] = covers(hat.ci_ces, truth.E);
        put(hat.ces, truth.E);
        put(sm.ces_uncorrected, truth.E);
        out.covered[s] = covers(sm.ci_ces, truth.E);
        put(sm.ces, truth.E);
      }
      for (double v : out.value)
        if (!std::isfinite(v)) throw NumericalError("non-finite estimate");
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
  });

  McResult result;
  result.design = design;
  for (std::size_t r = 0; r < reps.size(); ++r) {
    if (!reps[r].ok) {
      ++result.failures;
      result.failure_messages.push_back("replication " + std::to_string(r) + ": " + reps[r].error);
    }
  }
  if (static_cast<double>(result.failures) > 0.05 * static_cast<double>(design.reps)) {
    std::string first = result.failure_messages.empty() ? "" : " (first: " + result.failure_messages.front() + ")";
    throw NumericalError("mc run failed: " + std::to_string(result.failures) + " of " + std::to_string(design.reps) +
                         " replications errored" + first);
  }

  for (std::size_t s = 0; s < slots.size(); ++s) {
    EstimatorSummary sum;
    sum.name = slots[s].name;
    sum.quantity = slots[s].quantity;
    sum.a = slots[s].a;
    std::vector<double> est, tru;
    std::size_t covered = 0;
    for (const auto& rep : reps) {
      if (!rep.ok) continue;
      est.push_back(rep.value[s]);
      tru.push_back(rep.truth[s]);
      covered += rep.covered[s] ? 1 : 0;
    }
    sum.used = est.size();
    const ErrorMoments trimmed = error_moments(est, tru, 0.025);
    const ErrorMoments raw = error_moments(est, tru, 0.0);
    sum.B = trimmed.B;
    sum.S = trimmed.S;
    sum.R = trimmed.R;
    sum.B_raw = raw.B;
    sum.S_raw = raw.S;
    sum.R_raw = raw.R;
    if (slots[s].has_ci) sum.ecp = static_cast<double>(covered) / static_cast<double>(est.size());
    result.estimators.push_back(std::move(sum));
  }
  for (auto& e : result.estimators) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& o : result.estimators)
      if (o.quantity == e.quantity && o.a == e.a) best = std::min(best, o.R);
    e.relative_R = best > 0.0 ? e.R / best : 1.0;
  }
  return result;
}

std::vector<McDesign> preset_designs(const std::string& name, std::size_t reps, std::uint64_t seed) {
  if (name != "table1" && name != "table23" && name != "table4")
    throw InputError("unknown mc design preset '" + name + "'");
  std::vector<McDesign> out;
  for (double v : {3.0, 6.0}) {
    for (std::size_t n : {std::size_t{1000}, std::size_t{4000}}) {
      for (auto h : {Heteroskedasticity::h1, Heteroskedasticity::h2}) {
        McDesign d;
        d.v = v;
        d.n = n;
        d.variant = h;
        d.theta = 0.0;
        d.reps = reps;
        d.seed = seed;
        out.push_back(d);
      }
    }
  }
  return out;
}

}  // namespace evtrisk
