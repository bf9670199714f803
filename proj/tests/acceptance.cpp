// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "evtrisk/backtest.hpp"
#include "evtrisk/gpd.hpp"
#include "evtrisk/mc.hpp"
#include "evtrisk/parallel.hpp"
#include "evtrisk/risk.hpp"
#include "evtrisk/smoothing.hpp"
#include "evtrisk/tail.hpp"
#include "oracles/closed_forms.hpp"
#include "oracles/numeric.hpp"
#include "support/process.hpp"

namespace fs = std::filesystem;
using namespace evtrisk;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

bool within(double value, double centre, double tol) { return std::abs(value - centre) <= tol; }

Outcome coverage_arithmetic() {
  const CoverageTest a = coverage_test(18, 500, 0.95);
  const CoverageTest b = coverage_test(5, 500, 0.99);
  return {within(a.p, 0.151, 0.0005) && within(b.p, 1.0, 0.0005),
          "p(18,500,.95)=" + fmt(a.p, 6) + " p(5,500,.99)=" + fmt(b.p, 6)};
}

Outcome n_schedule() {
  const std::size_t a = choose_N(1000, 0.7), b = choose_N(2000, 0.7), c = choose_N(4000, 0.7), d = choose_N(1000, 1.0);
  return {a == 164 && b == 284 && c == 491 && d == 234,
          std::to_string(a) + "/" + std::to_string(b) + "/" + std::to_string(c) + "/" + std::to_string(d)};
}

Outcome gpd_recovery() {
  const double sigma = 1.0, k = -1.0 / 6.0;
  auto gen = substream(2024, 0);
  std::vector<double> z(50000);
  for (double& v : z) v = sigma * (1.0 - std::pow(open_uniform(gen), k)) / k;
  const GpdMle m = gpd_mle(z, {0.5, -0.05});
  const double grad = m.gradient.cwiseAbs().maxCoeff();
  return {std::abs(m.params.k - k) <= 0.02 && std::abs(m.params.sigma - sigma) <= 0.03 && grad < 1e-9,
          "sigma=" + fmt(m.params.sigma, 6) + " k=" + fmt(m.params.k, 6) + " |grad|=" + fmt(grad, 3)};
}

Outcome oracle_equivalences() {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(-1.0, 1.0);

  double ll_err = 0.0;
  for (int fixture = 0; fixture < 20; ++fixture) {
    const int d = 1 + fixture % 2, n = 60 + 7 * fixture;
    Eigen::MatrixXd x(n, d);
    Eigen::VectorXd y(n);
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    std::vector<double> ys(n);
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) {
        x(i, j) = rows[i][j] = nd(gen);
        s += std::sin(x(i, j));
      }
      y[i] = ys[i] = s + 0.3 * nd(gen);
    }
    Eigen::VectorXd q(d);
    std::vector<double> qv(d);
    for (int j = 0; j < d; ++j) q[j] = qv[j] = 0.5 * ud(gen);
    const double h = 0.8 + 0.05 * fixture;
    const auto e = local_linear(q, x, y, h);
    const auto o = oracle::local_linear(qv, rows, ys, h);
    ll_err = std::max(ll_err, std::abs(e.level - o[0]));
    for (int j = 0; j < d; ++j) ll_err = std::max(ll_err, std::abs(e.slope[j] - o[j + 1]));
  }

  double cdf_err = 0.0;
  std::vector<double> e(80);
  for (double& v : e) v = nd(gen);
  for (double h : {0.15, 0.5, 1.1})
    for (double u = -3.0; u <= 3.0; u += 0.25)
      cdf_err = std::max(cdf_err, std::abs(smoothed_cdf(u, e, h) - oracle::kde_cdf(u, e, h)));

  bool grid_ok = true;
  double grid_gap = 0.0;
  for (std::uint64_t seed : {1u, 2u}) {
    auto g = substream(seed, 99);
    std::vector<double> z(100);
    for (double& v : z) v = 1.5 * (1.0 - std::pow(open_uniform(g), -0.25)) / -0.25;
    const GpdMle m = gpd_mle(z, {1.0, -0.1});
    const oracle::GridResult r = oracle::gpd_grid_mle(z);
    grid_ok = grid_ok && m.loglik >= r.loglik - 1e-9 && std::abs(m.params.sigma - r.sigma) <= 2.0 * r.sigma_step + 1e-6 &&
              std::abs(m.params.k - r.k) <= 2.0 * r.k_step + 1e-6;
    grid_gap = std::max({grid_gap, std::abs(m.params.sigma - r.sigma), std::abs(m.params.k - r.k)});
  }

  double cf_err = 0.0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
  for (double k : {-0.45, -1.0 / 3.0, -0.25, -1.0 / 6.0, -0.1})
    for (double rho : {-0.5, -2.0, -3.5})
      for (double Z : {1.2, 1.778, 3.0}) {
        const AsymptoticVariances v = asymptotic_variances(k, rho, Z);
        const oracle::Variances o = oracle::variances(k, rho, Z);
        cf_err = std::max({cf_err, rel(v.sigma1, o.s1), rel(v.sigma1_bc, o.s1b), rel(v.sigma2, o.s2),
                           rel(v.sigma2_bc, o.s2b), rel(v.sigma3_bc, o.s3b)});
        const CrossoverConstants c = mse_crossover(k, rho, Z);
        const oracle::Crossover oc = oracle::crossover(k, rho, Z);
        if (c.C1 && std::isfinite(oc.C1)) cf_err = std::max(cf_err, rel(*c.C1, oc.C1));
        if (c.C2 && std::isfinite(oc.C2)) cf_err = std::max(cf_err, rel(*c.C2, oc.C2));
        if (c.C1.has_value() != std::isfinite(oc.C1) || c.C2.has_value() != std::isfinite(oc.C2)) cf_err = 1.0;
        // Curvature scaled so that |B_q| stays below 0.1 and the corrected quantile exists.
        const double curv = 0.1 * rho * oracle::d(k, rho);
        const MomentStats m{k, 2.0 * k * k + curv};
        const BiasCorrection bc = bias_correct_params({1.3, k + 0.02}, m, rho);
        const oracle::Corrected ob = oracle::corrected(1.3, k + 0.02, k, m.M_n, rho);
        cf_err = std::max({cf_err, rel(bc.params.sigma, ob.sigma), rel(bc.params.k, ob.k)});
        const CorrectionTerms t{rho, bc.d_hat, curv, k};
        const double Bq = quantile_bias_term(Z, t);
        const double q = q_eps_bc(0.99, bc.params, 2.0, Bq, 1000, 100);
        cf_err = std::max({cf_err, rel(Bq, oracle::B_q(Z, rho, oracle::d(k, rho), curv)),
                           rel(q, oracle::q_bc(2.0, bc.params.sigma, bc.params.k, 1000, 100, 0.99, Bq)),
                           rel(es_bias_term(q, Z, t), oracle::B_E(q, Z, rho, oracle::d(k, rho), curv, k))});
        const auto oA = oracle::A(k, rho);
        const auto Am = A_matrix(k, rho);
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 5; ++j) cf_err = std::max(cf_err, rel(Am(i, j), oA[i][j]));
      }

  return {ll_err <= 1e-10 && cdf_err <= 1e-8 && grid_ok && cf_err <= 1e-10,
          "local-linear " + fmt(ll_err, 2) + ", smoothed CDF " + fmt(cdf_err, 2) + ", grid gap " + fmt(grid_gap, 2) +
              ", closed forms " + fmt(cf_err, 2)};
}

const EstimatorSummary& find(const McResult& r, const std::string& name, std::optional<double> a = std::nullopt) {
  for (const auto& e : r.estimators)
    if (e.name == name && (!a || (e.a && std::abs(*e.a - *a) < 1e-12))) return e;
  throw std::runtime_error("estimator " + name + " not in result");
}

Outcome parameter_bias(const McResult& r) {
  const double bs = find(r, "sigma_smith").B, bk = find(r, "k_smith").B;
  const double ts = find(r, "sigma_tilde").B, tk = find(r, "k_tilde").B;
  const double sk_bc = find(r, "k_smith_bc").B, tk_bc = find(r, "k_tilde_bc").B;
  const bool ok = within(bs, 0.294, 0.08) && within(bk, 0.126, 0.06) && within(ts, 0.320, 0.10) &&
                  within(tk, 0.127, 0.07) && std::abs(sk_bc) <= 0.5 * std::abs(bk) && std::abs(tk_bc) <= 0.5 * std::abs(tk);
  return {ok, "smith B(sigma)=" + fmt(bs) + " B(k)=" + fmt(bk) + "; tilde B(sigma)=" + fmt(ts) + " B(k)=" + fmt(tk) +
                  "; corrected B(k) smith=" + fmt(sk_bc) + " tilde=" + fmt(tk_bc)};
}

Outcome quantile_accuracy(const McResult& r) {
  const EstimatorSummary& q = find(r, "q_hat", 0.99);
  const EstimatorSummary& qb = find(r, "q_hat_bc", 0.99);
  return {within(q.B, 0.043, 0.15) && q.R < qb.R,
          "B(q_hat)=" + fmt(q.B) + " R(q_hat)=" + fmt(q.R) + " R(q_hat_bc)=" + fmt(qb.R)};
}

Outcome ecp(const McResult& r) {
  const EstimatorSummary& qb = find(r, "q_hat_bc", 0.999);
  const double c = qb.ecp.value_or(0.0);
  return {c >= 0.85, "ECP(q_hat_bc, .999)=" + fmt(c, 3) + " B=" + fmt(qb.B) + " over " + std::to_string(qb.used) + " reps"};
}

Outcome duration_size() {
  int rejected = 0, evaluated = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto gen = substream(555, seed);
    std::vector<char> v(500);
    for (auto& x : v) x = open_uniform(gen) < 0.05 ? 1 : 0;
    const DurationTests t = duration_tests(v, 0.95);
    if (!t.p_ind) continue;
    ++evaluated;
    rejected += *t.p_ind < 0.05;
  }
  const double rate = evaluated ? static_cast<double>(rejected) / evaluated : 0.0;
  return {evaluated > 0 && rate >= 0.01 && rate <= 0.12,
          "rejection rate " + fmt(rate, 3) + " over " + std::to_string(evaluated) + " evaluable sequences"};
}

Outcome bootstrap_symmetry() {
  double lo = 1.0, hi = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto gen = substream(808, seed);
    std::vector<double> r;
    const std::size_t half = 10 + seed % 20;
    for (std::size_t i = 0; i < half; ++i) {
      const double v = -std::log(open_uniform(gen));
      r.push_back(v);
      r.push_back(-v);
    }
    const EsBootstrapTest t = es_bootstrap_test(r, 9999, seed);
    const double p = t.p.value_or(-1.0);
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  return {lo >= 0.3 && hi <= 0.7, "p range [" + fmt(lo, 3) + ", " + fmt(hi, 3) + "] over 50 fixtures"};
}

Outcome cli_determinism() {
  const std::string cli = EVTRISK_CLI_PATH;
  const fs::path dir = fs::temp_directory_path() / ("evtrisk_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const fs::path data = dir / "returns.csv", design = dir / "design.json";
  {
    auto gen = substream(31, 0);
    const StandardizedT t(4.0);
    std::ofstream out(data);
    out.precision(17);
    out << "return\n";
    double y = 0.0;
    for (int i = 0; i < 1100; ++i) {
      y = 0.2 * y + std::sqrt(0.4 + 0.3 * y * y) * t.draw(gen);
      out << y << "\n";
    }
    std::ofstream(design) << R"({"n": 1000, "reps": 8, "seed": 3, "a_levels": [0.95, 0.99]})";
  }
  const std::vector<std::vector<std::string>> commands{
      {"estimate", "--returns", data.string(), "--a", "0.95,0.99,0.995"},
      {"mc", "--design", design.string()},
      {"backtest", "--returns", data.string(), "--m", "1030", "--n", "1000", "--a", "0.95,0.99", "--B-boot", "999"}};
  bool ok = true;
  std::string detail;
  for (const auto& c : commands) {
    std::vector<std::string> one{"--no-timestamp", "--threads", "1"}, eight{"--no-timestamp", "--threads", "8"};
    one.insert(one.end(), c.begin(), c.end());
    eight.insert(eight.end(), c.begin(), c.end());
    const auto a = support::run(cli, one), b = support::run(cli, one), e = support::run(cli, eight);
    const bool same = a.code == 0 && b.code == 0 && e.code == 0 && !a.out.empty() && a.out == b.out && a.out == e.out;
    ok = ok && same;
    detail += c.front() + (same ? " identical; " : " DIFFERS (exit " + std::to_string(a.code) + "); ");
  }
  fs::remove_all(dir);
  return {ok, detail};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " (" << fmt(secs, 3)
              << " s)" << std::endl;
  };

  report(1, "coverage-test arithmetic", coverage_arithmetic);
  report(2, "tail-count schedule", n_schedule);
  report(3, "GPD recovery", gpd_recovery);
  report(4, "oracle equivalences", oracle_equivalences);

  McDesign design;
  design.n = 1000;
  design.variant = Heteroskedasticity::h1;
  design.theta = 0.0;
  design.v = 3.0;
  design.reps = 200;
  design.seed = 7;
  std::optional<McResult> mc;
  std::string mc_error;
  const auto start = std::chrono::steady_clock::now();
  try {
    mc = run_experiment(design, resolve_threads());
  } catch (const std::exception& e) {
    mc_error = e.what();
  }
  const double mc_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "     Monte Carlo design " << design.label() << " ran in " << fmt(mc_secs, 3) << " s" << std::endl;
  auto with_mc = [&](Outcome (*fn)(const McResult&)) {
    return [&, fn]() -> Outcome { return mc ? fn(*mc) : Outcome{false, "experiment failed: " + mc_error}; };
  };
  report(5, "tail parameter bias", with_mc(parameter_bias));
  report(6, "quantile bias and RMSE ordering at a=0.99", with_mc(quantile_accuracy));
  report(7, "confidence-interval coverage at a=0.999", with_mc(ecp));

  report(8, "duration-test size", duration_size);
  report(9, "ES bootstrap symmetry", bootstrap_symmetry);
  report(10, "CLI determinism", cli_determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
