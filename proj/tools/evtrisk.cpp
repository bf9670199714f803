#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "evtrisk/backtest.hpp"
#include "evtrisk/error.hpp"
#include "evtrisk/ingest.hpp"
#include "evtrisk/mc.hpp"
#include "evtrisk/parallel.hpp"
#include "evtrisk/pipeline.hpp"

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace evtrisk;

namespace {

struct Common {
  std::optional<unsigned> threads;
  bool no_timestamp = false;
  std::string log_level = "warn";
};

struct InputArgs {
  std::string prices, returns;
  std::string date_col = "date", price_col = "price", return_col = "return";
};

struct EstimateArgs {
  InputArgs in;
  std::vector<double> a{0.99};
  std::string x = "last";
  std::string N = "auto";
  double c = 0.7;
  std::string rho = "auto";
  bool no_bc = false;
  std::string anchor = "moment";
  std::string h3_source = "residuals";
  std::string out;
};

struct McArgs {
  std::string design = "table1";
  std::size_t reps = 200;
  std::uint64_t seed = 1;
  std::string out;
};

struct BacktestArgs {
  InputArgs in;
  std::size_t m = 1500, n = 1000;
  std::vector<double> a{0.95, 0.99, 0.995};
  std::string N = "auto";
  std::uint64_t seed = 1;
  std::size_t B_boot = 9999;
  bool bias_corrected = false;
  std::string out, dump;
};

void add_input(CLI::App* cmd, InputArgs& in) {
  cmd->add_option("--prices", in.prices, "CSV of dated prices");
  cmd->add_option("--returns", in.returns, "CSV of return values");
  cmd->add_option("--date-col", in.date_col, "date column name")->capture_default_str();
  cmd->add_option("--price-col", in.price_col, "price column name")->capture_default_str();
  cmd->add_option("--return-col", in.return_col, "return column name")->capture_default_str();
}

ReturnSeries load_input(const InputArgs& in) {
  if (!in.prices.empty() && !in.returns.empty()) throw InputError("--prices and --returns are mutually exclusive");
  if (in.prices.empty() && in.returns.empty()) throw InputError("one of --prices or --returns is required");
  if (!in.prices.empty()) return to_returns(load_prices(in.prices, in.date_col, in.price_col));
  return load_returns(in.returns, in.return_col, in.date_col);
}

void check_levels(const std::vector<double>& levels) {
  if (levels.empty()) throw InputError("at least one level required");
  for (double a : levels) {
    if (!(a > 0.0 && a < 1.0)) throw InputError("level must be in (0,1)");
  }
}

std::optional<std::size_t> parse_count(const std::string& text, const char* flag) {
  if (text == "auto") return std::nullopt;
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || v <= 0) throw InputError(std::string(flag) + " must be a positive integer or 'auto'");
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& text, const char* flag) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || !std::isfinite(v)) throw InputError(std::string(flag) + ": cannot parse '" + text + "'");
  return v;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void stamp(json& j, const Common& common) {
  if (common.no_timestamp) return;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  j["generated_at"] = buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw InputError("write to '" + path + "' failed");
}

const char* rho_status(RhoEstimate::Status s) {
  switch (s) {
    case RhoEstimate::Status::estimated: return "estimated";
    case RhoEstimate::Status::clamped: return "clamped";
    case RhoEstimate::Status::fallback: return "fallback";
    case RhoEstimate::Status::user: return "user";
  }
  return "";
}

json interval(const std::optional<Interval>& ci) {
  if (!ci) return nullptr;
  json j;
  j["lower"] = ci->lower;
  j["upper"] = std::isfinite(ci->upper) ? json(ci->upper) : json(nullptr);
  j["one_sided"] = ci->one_sided;
  return j;
}

std::string fmt_opt(const std::optional<double>& v, int width = 12) {
  if (!v) return fmt::format("{:>{}}", "NA", width);
  return fmt::format("{:>{}.6f}", *v, width);
}

int run_estimate(const EstimateArgs& args, const Common& common) {
  check_levels(args.a);
  const auto N = parse_count(args.N, "--N");
  if (!(args.c > 0.0)) throw InputError("--c must be positive");
  PipelineOptions popt;
  popt.N = N;
  popt.c = args.c;
  popt.tail.bias_correction = !args.no_bc;
  if (args.rho != "auto") {
    const double r = parse_real(args.rho, "--rho");
    if (!(r < 0.0)) throw InputError("--rho must be negative");
    popt.tail.rho = r;
  }
  if (args.anchor == "moment") popt.tail.anchor = BiasAnchor::moment_shape;
  else if (args.anchor == "fitted") popt.tail.anchor = BiasAnchor::fitted_shape;
  else throw InputError("--bc-anchor must be 'moment' or 'fitted'");
  if (args.h3_source == "residuals") popt.h3_source = H3Source::residuals;
  else if (args.h3_source == "conditioning") popt.h3_source = H3Source::conditioning;
  else throw InputError("--h3-source must be 'residuals' or 'conditioning'");

  const ReturnSeries series = load_input(args.in);
  double xval = 0.0;
  if (args.x == "last") {
    if (series.values.empty()) throw InputError("empty series");
    xval = series.values.back();
  } else {
    xval = parse_real(args.x, "--x");
  }

  const FittedModel model = fit_model(series, popt);
  RiskOptions ropt;
  ropt.bias_correction = !args.no_bc;
  Eigen::VectorXd x(1);
  x(0) = xval;

  json j;
  j["command"] = "estimate";
  stamp(j, common);
  j["input"] = {{"source", args.in.prices.empty() ? fs::path(args.in.returns).filename().string()
                                                 : fs::path(args.in.prices).filename().string()},
                {"kind", series.kind == ReturnKind::losses ? "losses" : "raw"},
                {"observations", series.values.size()}};
  j["location_scale"] = {{"pairs", model.fit.size()},
                         {"lag", model.fit.lag()},
                         {"h1", model.fit.h1()},
                         {"h2", model.fit.h2()}};
  const TailFit& t = model.tail;
  json tail;
  tail["n"] = t.sample.n;
  tail["N"] = t.sample.N;
  tail["a_N"] = t.sample.a_N;
  tail["threshold"] = t.sample.q_tilde;
  tail["h3"] = model.h3;
  tail["exceedances"] = t.sample.N_s;
  tail["mle"] = {{"sigma", t.mle.params.sigma},
                 {"k", t.mle.params.k},
                 {"loglik", t.mle.loglik},
                 {"iterations", t.mle.iterations}};
  tail["moments"] = t.moments ? json{{"k_mom", t.moments->k_mom}, {"M_n", t.moments->M_n}} : json(nullptr);
  tail["rho"] = t.rho ? json{{"value", t.rho->value}, {"status", rho_status(t.rho->status)}} : json(nullptr);
  tail["bias_corrected"] = t.bc ? json{{"sigma", t.bc->params.sigma},
                                       {"k", t.bc->params.k},
                                       {"anchor_k", t.bc->anchor_k},
                                       {"d_hat", t.bc->d_hat}}
                                : json(nullptr);
  j["tail"] = tail;
  j["x"] = xval;

  std::vector<std::string> warnings = model.warnings;
  json levels = json::array();
  std::vector<RiskEstimate> risks;
  for (double a : args.a) {
    RiskEstimate r = forecast(model, a, x, ropt);
    json l;
    l["a"] = a;
    l["cvar"] = r.cvar;
    l["ces"] = r.ces;
    l["cvar_uncorrected"] = r.cvar_uncorrected;
    l["ces_uncorrected"] = r.ces_uncorrected;
    l["q_eps"] = r.q_eps;
    l["es_eps"] = r.es_eps;
    l["q_eps_bc"] = opt(r.q_eps_bc);
    l["es_eps_bc"] = opt(r.es_eps_bc);
    l["B_q"] = opt(r.B_q);
    l["B_E"] = opt(r.B_E);
    l["Z_hat"] = r.Z_hat;
    l["m_hat"] = r.m_hat;
    l["h_hat"] = r.h_hat;
    l["ci_cvar"] = interval(r.ci_cvar);
    l["ci_ces"] = interval(r.ci_ces);
    for (const auto& w : r.warnings) warnings.push_back(fmt::format("a={}: {}", a, w));
    levels.push_back(l);
    risks.push_back(std::move(r));
  }
  j["levels"] = levels;
  j["warnings"] = warnings;
  for (const auto& w : warnings) spdlog::warn("{}", w);

  const std::string dumped = j.dump(2) + "\n";
  if (args.out.empty()) {
    std::cout << dumped;
  } else {
    write_text(args.out, dumped);
    std::cout << fmt::format("n={} N={} threshold={:.6f} sigma={:.6f} k={:.6f} x={:.6f}\n", t.sample.n,
                             t.sample.N, t.sample.q_tilde, t.params.sigma, t.params.k, xval);
    std::cout << fmt::format("{:>8} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}\n", "a", "cvar", "ces", "cvar_lo",
                             "cvar_hi", "ces_lo", "ces_hi");
    for (const auto& r : risks) {
      auto lo = [](const std::optional<Interval>& ci) { return ci ? std::optional<double>(ci->lower) : std::nullopt; };
      auto hi = [](const std::optional<Interval>& ci) {
        return ci && std::isfinite(ci->upper) ? std::optional<double>(ci->upper) : std::nullopt;
      };
      std::cout << fmt::format("{:>8} {:>12.6f} {:>12.6f} {} {} {} {}\n", r.a, r.cvar, r.ces, fmt_opt(lo(r.ci_cvar)),
                               fmt_opt(hi(r.ci_cvar)), fmt_opt(lo(r.ci_ces)), fmt_opt(hi(r.ci_ces)));
    }
  }
  return 0;
}

std::vector<McDesign> load_custom_designs(const std::string& path, const McArgs& args) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open design file '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("design file: " + std::string(e.what()));
  }
  if (doc.is_object()) doc = nlohmann::json::array({doc});
  if (!doc.is_array() || doc.empty()) throw InputError("design file must hold an object or a nonempty array");
  std::vector<McDesign> out;
  try {
    for (const auto& d : doc) {
      McDesign m;
      m.reps = args.reps;
      m.seed = args.seed;
      m.n = d.value("n", m.n);
      const std::string variant = d.value("variant", std::string("h1"));
      if (variant == "h1") m.variant = Heteroskedasticity::h1;
      else if (variant == "h2") m.variant = Heteroskedasticity::h2;
      else throw InputError("variant must be 'h1' or 'h2'");
      m.theta = d.value("theta", m.theta);
      m.v = d.value("v", m.v);
      m.reps = d.value("reps", m.reps);
      m.seed = d.value("seed", m.seed);
      m.a_levels = d.value("a_levels", m.a_levels);
      m.c = d.value("c", m.c);
      m.burn_in = d.value("burn_in", m.burn_in);
      const std::string anchor = d.value("bc_anchor", std::string("moment"));
      if (anchor == "moment") m.anchor = BiasAnchor::moment_shape;
      else if (anchor == "fitted") m.anchor = BiasAnchor::fitted_shape;
      else throw InputError("bc_anchor must be 'moment' or 'fitted'");
      m.validate();
      out.push_back(m);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("design file: " + std::string(e.what()));
  }
  return out;
}

int run_mc(const McArgs& args, const Common& common) {
  if (args.reps < 2) throw InputError("--reps must be at least 2");
  std::vector<McDesign> designs;
  if (args.design.size() > 5 && args.design.substr(args.design.size() - 5) == ".json") {
    designs = load_custom_designs(args.design, args);
  } else if (args.design == "table1" || args.design == "table23" || args.design == "table4") {
    designs = preset_designs(args.design, args.reps, args.seed);
  } else {
    throw InputError("--design must be table1, table23, table4 or a .json file");
  }
  const unsigned threads = resolve_threads(common.threads);

  std::ostringstream csv;
  csv << "design,n,variant,theta,v,reps,estimator,quantity,a,B,S,R,B_raw,S_raw,R_raw,relative_R,ecp,used,failures\n";
  std::ostringstream table;
  for (const auto& d : designs) {
    spdlog::info("running {}", d.label());
    const McResult res = run_experiment(d, threads);
    for (const auto& msg : res.failure_messages) spdlog::warn("{}: {}", d.label(), msg);
    table << fmt::format("{}  (failures {})\n", d.label(), res.failures);
    table << fmt::format("  {:<14} {:>6} {:>10} {:>10} {:>10} {:>8} {:>7}\n", "estimator", "a", "B", "S", "R", "rel_R",
                         "ECP");
    for (const auto& e : res.estimators) {
      csv << fmt::format("{},{},{},{},{},{},{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{},{}\n",
                         d.label(), d.n, d.variant == Heteroskedasticity::h1 ? "h1" : "h2", d.theta, d.v, d.reps,
                         e.name, e.quantity, e.a ? fmt::format("{}", *e.a) : "", e.B, e.S, e.R, e.B_raw, e.S_raw,
                         e.R_raw, e.relative_R, e.ecp ? fmt::format("{:.17g}", *e.ecp) : "", e.used, res.failures);
      table << fmt::format("  {:<14} {:>6} {:>10.4f} {:>10.4f} {:>10.4f} {:>8.3f} {:>7}\n", e.name,
                           e.a ? fmt::format("{}", *e.a) : "", e.B, e.S, e.R, e.relative_R,
                           e.ecp ? fmt::format("{:.3f}", *e.ecp) : "");
    }
  }
  (void)common;
  if (args.out.empty()) {
    std::cout << csv.str();
  } else {
    write_text(args.out, csv.str());
    std::cout << table.str();
  }
  return 0;
}

int run_backtest_cmd(const BacktestArgs& args, const Common& common) {
  check_levels(args.a);
  BacktestConfig cfg;
  cfg.m = args.m;
  cfg.n = args.n;
  cfg.a_levels = args.a;
  cfg.N = parse_count(args.N, "--N");
  cfg.seed = args.seed;
  cfg.B_boot = args.B_boot;
  cfg.bias_corrected = args.bias_corrected;
  const ReturnSeries series = load_input(args.in);
  cfg.validate(series.values.size());
  const unsigned threads = resolve_threads(common.threads);
  const BacktestReport rep = run_backtest(series, cfg, threads);
  const auto& steps = rep.forecasts.steps;

  auto label = [&](std::size_t index) {
    return index < series.timestamps.size() ? series.timestamps[index] : std::to_string(index);
  };

  json j;
  j["command"] = "backtest";
  stamp(j, common);
  j["config"] = {{"m", cfg.m},
                 {"n", cfg.n},
                 {"N", cfg.tail_count()},
                 {"a_levels", cfg.a_levels},
                 {"seed", cfg.seed},
                 {"B_boot", cfg.B_boot},
                 {"bias_corrected", cfg.bias_corrected}};
  j["forecasts"] = steps.size();
  j["carried_forward"] = rep.forecasts.carried;
  json levels = json::array();
  for (const auto& l : rep.levels) {
    json v;
    v["a"] = l.a;
    v["violations"] = l.coverage.W;
    v["expected"] = l.coverage.expected;
    v["coverage_z"] = l.coverage.z;
    v["coverage_p"] = l.coverage.p;
    v["p_ind"] = opt(l.durations.p_ind);
    v["p_cc"] = opt(l.durations.p_cc);
    v["weibull_shape"] = opt(l.durations.shape);
    if (!l.durations.note.empty()) v["duration_note"] = l.durations.note;
    v["es_p"] = opt(l.es.p);
    v["es_t"] = opt(l.es.t_obs);
    v["es_residuals"] = l.es.count;
    v["es_zero_variance"] = l.es.zero_variance;
    json dates = json::array();
    for (auto idx : l.violation_index) dates.push_back(label(idx));
    v["violation_dates"] = dates;
    levels.push_back(v);
  }
  j["levels"] = levels;

  if (!args.dump.empty()) {
    std::ostringstream csv;
    csv << "date,return";
    const bool single = cfg.a_levels.size() == 1;
    for (double a : cfg.a_levels) {
      if (single) csv << ",cvar,ces";
      else csv << fmt::format(",cvar_{0},ces_{0}", a);
    }
    csv << "\n";
    for (const auto& s : steps) {
      csv << label(s.index) << fmt::format(",{:.17g}", s.realized);
      for (std::size_t i = 0; i < s.cvar.size(); ++i) csv << fmt::format(",{:.17g},{:.17g}", s.cvar[i], s.ces[i]);
      csv << "\n";
    }
    write_text(args.dump, csv.str());
  }

  const std::string dumped = j.dump(2) + "\n";
  if (args.out.empty()) {
    std::cout << dumped;
  } else {
    write_text(args.out, dumped);
    std::cout << fmt::format("{} forecasts, {} carried forward\n", steps.size(), rep.forecasts.carried);
    std::cout << fmt::format("{:>7} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}\n", "a", "W", "expected", "p_cov", "p_ind",
                             "p_cc", "p_es");
    for (const auto& l : rep.levels) {
      std::cout << fmt::format("{:>7} {:>6} {:>9.2f} {:>9.3f} {} {} {}\n", l.a, l.coverage.W, l.coverage.expected,
                               l.coverage.p, fmt_opt(l.durations.p_ind, 9), fmt_opt(l.durations.p_cc, 9),
                               fmt_opt(l.es.p, 9));
    }
  }
  if (rep.forecasts.carried > 0) spdlog::warn("{} window fits failed; previous forecasts carried", rep.forecasts.carried);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional VaR and expected shortfall from extreme-value tail fits"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--threads", common.threads, "worker threads (default EVTRISK_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--no-timestamp", common.no_timestamp, "omit the generation time from JSON output");
  app.add_option("--log-level", common.log_level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}))
      ->capture_default_str();

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "fit one series and report CVaR/CES");
  add_input(e, est.in);
  e->add_option("--a", est.a, "levels, comma separated")->delimiter(',');
  e->add_option("--x", est.x, "conditioning value or 'last'")->capture_default_str();
  e->add_option("--N", est.N, "tail count or 'auto'")->capture_default_str();
  e->add_option("--c", est.c, "automatic N = round(c n^0.79)")->capture_default_str();
  e->add_option("--rho", est.rho, "second-order parameter or 'auto'")->capture_default_str();
  e->add_flag("--no-bias-correction", est.no_bc, "report uncorrected estimates only");
  e->add_option("--bc-anchor", est.anchor, "shape used by the bias correction: moment or fitted")
      ->capture_default_str();
  e->add_option("--h3-source", est.h3_source, "IQR sample for the residual CDF bandwidth: residuals or conditioning")
      ->capture_default_str();
  e->add_option("--out", est.out, "JSON report path (stdout when absent)");

  McArgs mc;
  auto* m = app.add_subcommand("mc", "Monte Carlo replication of estimator bias and RMSE");
  m->add_option("--design", mc.design, "table1, table23, table4 or a JSON design file")->capture_default_str();
  m->add_option("--reps", mc.reps, "replications per design")->capture_default_str();
  m->add_option("--seed", mc.seed, "master seed")->capture_default_str();
  m->add_option("--out", mc.out, "CSV path (stdout when absent)");

  BacktestArgs bt;
  auto* b = app.add_subcommand("backtest", "rolling out-of-sample forecasts and violation tests");
  add_input(b, bt.in);
  b->add_option("--m", bt.m, "observations used")->capture_default_str();
  b->add_option("--n", bt.n, "window length")->capture_default_str();
  b->add_option("--a", bt.a, "levels, comma separated")->delimiter(',');
  b->add_option("--N", bt.N, "tail count or 'auto'")->capture_default_str();
  b->add_option("--seed", bt.seed, "bootstrap seed")->capture_default_str();
  b->add_option("--B-boot", bt.B_boot, "bootstrap resamples")->capture_default_str();
  b->add_flag("--bias-corrected", bt.bias_corrected, "score bias-corrected forecasts");
  b->add_option("--out", bt.out, "JSON report path (stdout when absent)");
  b->add_option("--dump-forecasts", bt.dump, "per-step forecast CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& s) {
    return app.exit(s);
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n\n" << app.help();
    return 1;
  }

  auto logger = spdlog::stderr_color_mt("evtrisk");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(common.log_level));
  spdlog::set_pattern("%^%l%$: %v");

  try {
    if (*e) return run_estimate(est, common);
    if (*m) return run_mc(mc, common);
    if (*b) return run_backtest_cmd(bt, common);
  } catch (const InputError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}
