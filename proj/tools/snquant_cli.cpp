// snquant: persistence-robust structural-break tests for predictive quantile
// and CoVaR regressions, with simulated critical values and the Monte Carlo
// experiment harness.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "snquant/csv.hpp"
#include "snquant/experiments.hpp"
#include "snquant/limit.hpp"
#include "snquant/report.hpp"
#include "snquant/sn.hpp"
#include "snquant/strings.hpp"
#include "snquant/table_io.hpp"

namespace {

using namespace snquant;

struct IoArgs {
  std::string input;
  std::string y_col;
  std::string z_col;
  std::string x_cols;
  std::string date_col;
  bool no_lag = false;
  std::string out;
};

void add_io_options(CLI::App* cmd, IoArgs& io, bool need_z) {
  cmd->add_option("--input", io.input, "input CSV file")->required();
  cmd->add_option("--y-col", io.y_col, "response column")->required();
  auto* z = cmd->add_option("--z-col", io.z_col,
                            "second response column (CoVaR target)");
  if (need_z) z->required();
  cmd->add_option("--x-cols", io.x_cols,
                  "comma-separated predictor columns")->required();
  cmd->add_option("--date-col", io.date_col,
                  "date column, passed through unparsed");
  cmd->add_flag("--no-lag{true},--lagged{false}", io.no_lag,
                "input is pre-lagged / apply the one-period lag (default)");
  cmd->add_option("--out", io.out, "output file (default: stdout)");
}

CsvSchema make_schema(const IoArgs& io) {
  CsvSchema schema;
  schema.y_col = io.y_col;
  if (!io.z_col.empty()) schema.z_col = io.z_col;
  schema.x_cols = detail::split_list(io.x_cols);
  if (!io.date_col.empty()) schema.date_col = io.date_col;
  schema.lag_predictors = !io.no_lag;
  return schema;
}

// floor(n*eps) must reach the minimum window length.
Eigen::Index min_rows_for_test(int k, double epsilon) {
  const int w = min_window_length(k);
  return static_cast<Eigen::Index>(std::ceil(w / epsilon));
}

void emit(const std::string& content, const std::string& out) {
  if (out.empty()) {
    std::fputs(content.c_str(), stdout);
    if (!content.empty() && content.back() != '\n') std::fputc('\n', stdout);
  } else {
    atomic_write_file(out, content);
  }
}

int finish_test(const nlohmann::json& doc, const std::string& out,
                bool fail_on_reject, bool rejected) {
  emit(doc.dump(2), out);
  return (fail_on_reject && rejected) ? 2 : 0;
}

struct TestArgs {
  IoArgs io;
  double alpha = 0.9;
  double beta = -1.0;  // default: alpha
  double epsilon = 0.1;
  double level = 0.05;
  std::string critvals;
  std::string critvals_qr;  // two-stage first stage
  std::uint64_t seed = kDefaultTableSeed;
  int threads = 0;
  bool fail_on_reject = false;
};

void add_test_options(CLI::App* cmd, TestArgs& args, bool need_z) {
  add_io_options(cmd, args.io, need_z);
  cmd->add_option("--alpha", args.alpha, "quantile level (default 0.9)");
  if (need_z) cmd->add_option("--beta", args.beta, "CoVaR level (default: alpha)");
  cmd->add_option("--epsilon", args.epsilon, "trimming (default 0.1)");
  cmd->add_option("--level", args.level, "test level (default 0.05)");
  cmd->add_option("--critvals", args.critvals, "critical-value table JSON");
  cmd->add_option("--seed", args.seed, "seed for on-the-fly tables");
  cmd->add_option("--threads", args.threads, "worker cap (0 = all cores)");
  cmd->add_flag("--fail-on-reject", args.fail_on_reject,
                "exit 2 when the test rejects");
}

int run_qr_test(const TestArgs& args) {
  CsvSchema schema = make_schema(args.io);
  const int k = static_cast<int>(schema.x_cols.size());
  IngestResult ing =
      ingest(args.io.input, schema, min_rows_for_test(k, args.epsilon));
  const GridSpec grid =
      GridSpec::make(static_cast<int>(ing.data.n()), args.epsilon);
  QuantilePath fwd = forward_estimates(ing.data, args.alpha, args.epsilon);
  QuantilePath bwd = backward_estimates(ing.data, args.alpha, args.epsilon);
  BreakTestResult res =
      sn_break_statistic(fwd.coef_path(), bwd.coef_path(), grid);
  std::vector<std::string> warnings;
  CriticalValueTable table = resolve_table("sup_break", k + 1, args.epsilon,
                                           args.critvals, args.seed,
                                           args.threads, &warnings);
  apply_decision(res, table, args.level);
  nlohmann::json doc = break_result_to_json(res, "qr", args.alpha,
                                            std::nullopt, table, warnings);
  return finish_test(doc, args.io.out, args.fail_on_reject,
                     res.decision->reject);
}

int run_covar_test(const TestArgs& args, bool exposure) {
  CsvSchema schema = make_schema(args.io);
  const int k = static_cast<int>(schema.x_cols.size());
  IngestResult ing =
      ingest(args.io.input, schema, min_rows_for_test(k, args.epsilon));
  if (exposure) std::swap(ing.data.y, *ing.data.z);
  const double beta = args.beta > 0.0 ? args.beta : args.alpha;
  const GridSpec grid =
      GridSpec::make(static_cast<int>(ing.data.n()), args.epsilon);
  QuantilePath fwd = forward_estimates(ing.data, args.alpha, args.epsilon);
  QuantilePath bwd = backward_estimates(ing.data, args.alpha, args.epsilon);
  CoefPath gf = stacked_path_from_qr(ing.data, fwd, beta);
  CoefPath gb = stacked_path_from_qr(ing.data, bwd, beta);
  BreakTestResult res = sn_break_statistic(gf, gb, grid);
  std::vector<std::string> warnings;
  CriticalValueTable table = resolve_table("sup_break", 2 * k + 2, args.epsilon,
                                           args.critvals, args.seed,
                                           args.threads, &warnings);
  apply_decision(res, table, args.level);
  nlohmann::json doc =
      break_result_to_json(res, exposure ? "exposure" : "covar", args.alpha,
                           beta, table, warnings);
  return finish_test(doc, args.io.out, args.fail_on_reject,
                     res.decision->reject);
}

int run_two_stage_test(const TestArgs& args) {
  CsvSchema schema = make_schema(args.io);
  const int k = static_cast<int>(schema.x_cols.size());
  IngestResult ing =
      ingest(args.io.input, schema, min_rows_for_test(k, args.epsilon));
  const double beta = args.beta > 0.0 ? args.beta : args.alpha;
  std::vector<std::string> warnings;
  CriticalValueTable table_qr =
      resolve_table("sup_break", k + 1, args.epsilon, args.critvals_qr,
                    args.seed, args.threads, &warnings);
  // U_{n,beta} has the same k+1-dimensional limit as U_{n,alpha}
  CriticalValueTable table_beta =
      args.critvals.empty() && args.critvals_qr.empty()
          ? table_qr
          : resolve_table("sup_break", k + 1, args.epsilon, args.critvals,
                          args.seed, args.threads, &warnings);
  TwoStageResult res =
      two_stage_covar_test(ing.data, args.alpha, beta, args.epsilon,
                           args.level, table_qr, table_beta);
  nlohmann::json doc = two_stage_to_json(res, args.alpha, beta, args.level,
                                         table_qr, table_beta, warnings);
  return finish_test(doc, args.io.out, args.fail_on_reject, res.overall_reject);
}

struct CritvalArgs {
  int dim = 0;
  bool scalar = false;
  double epsilon = 0.1;
  int grid = 5000;
  std::int64_t reps = 100000;
  std::uint64_t seed = kDefaultTableSeed;
  int threads = 0;
  std::string out;
  bool raw = true;
};

int run_critvals(const CritvalArgs& args) {
  require(args.scalar || args.dim >= 1, ErrorCode::InvalidParameter,
          "--dim must be >= 1 (or pass --scalar)");
  SimOptions opt;
  opt.threads = args.threads;
  CriticalValueTable table =
      args.scalar
          ? simulate_limit_scalar(args.epsilon, args.grid, args.reps, args.seed, opt)
          : simulate_limit_U(args.dim, args.epsilon, args.grid, args.reps,
                             args.seed, opt);
  if (!args.out.empty()) store_table(table, args.out, args.raw);
  std::printf("# statistic=%s dim=%d epsilon=%g grid=%d reps=%lld seed=%llu\n",
              table.statistic.c_str(), table.dim, table.epsilon,
              table.grid_points, static_cast<long long>(table.replications),
              static_cast<unsigned long long>(table.seed));
  for (const auto& [prob, value] : table.quantiles)
    std::printf("%-6g %.6f\n", prob, value);
  return 0;
}

struct McArgs {
  std::string config;
  std::string mode;
  std::string regime;
  std::string params;
  std::string ns;
  std::string deltas;
  std::string tests;
  double s_star = -1.0;
  int reps = -1;
  double level = -1.0;
  double alpha = -1.0;
  double beta = -1.0;
  double epsilon = -1.0;
  int k = -1;
  double rho_veps = -2.0;
  std::int64_t seed = -1;
  int threads = 0;
  std::string critvals_qr, critvals_covar;
  std::string out;
};

int run_mc(const McArgs& args) {
  McSweepConfig cfg;
  if (!args.config.empty()) cfg = parse_mc_config_file(args.config);
  if (!args.mode.empty()) {
    require(args.mode == "size" || args.mode == "power",
            ErrorCode::InvalidParameter, "--mode must be size or power");
    cfg.mode = args.mode;
  }
  if (!args.regime.empty()) {
    require(args.regime == "i0" || args.regime == "ns",
            ErrorCode::InvalidParameter, "--regime must be i0 or ns");
    cfg.regime = args.regime == "i0" ? PredictorRegime::I0 : PredictorRegime::NS;
  }
  auto parse_doubles = [](const std::string& s, const char* what) {
    std::vector<double> v;
    for (const auto& item : detail::split_list(s))
      v.push_back(detail::parse_double(item, what));
    require(!v.empty(), ErrorCode::InvalidParameter,
            std::string("empty list for ") + what);
    return v;
  };
  if (!args.params.empty()) cfg.params = parse_doubles(args.params, "--param-list");
  if (!args.ns.empty()) {
    cfg.ns.clear();
    for (double v : parse_doubles(args.ns, "--n-list"))
      cfg.ns.push_back(static_cast<int>(v));
  }
  if (!args.deltas.empty()) cfg.deltas = parse_doubles(args.deltas, "--delta-list");
  if (args.s_star >= 0.0) cfg.s_star = args.s_star;
  if (args.reps >= 0) cfg.options.reps = args.reps;
  if (args.level >= 0.0) cfg.options.level = args.level;
  if (args.alpha > 0.0) cfg.options.alpha = args.alpha;
  if (args.beta > 0.0) cfg.options.beta = args.beta;
  if (args.epsilon > 0.0) cfg.options.epsilon = args.epsilon;
  if (args.k > 0) cfg.options.k = args.k;
  if (args.rho_veps >= -1.0) cfg.options.rho_veps = args.rho_veps;
  if (args.seed >= 0) cfg.options.seed = static_cast<std::uint64_t>(args.seed);
  cfg.options.threads = args.threads;
  if (!args.tests.empty()) {
    cfg.options.run_qr = false;
    cfg.options.run_covar = false;
    for (const auto& t : detail::split_list(args.tests)) {
      if (t == "qr")
        cfg.options.run_qr = true;
      else if (t == "covar")
        cfg.options.run_covar = true;
      else
        fail(ErrorCode::InvalidParameter, "unknown test '" + t + "'");
    }
  }
  require(cfg.options.reps >= 1, ErrorCode::InvalidParameter,
          "reps must be >= 1");

  std::vector<std::string> warnings;
  CriticalValueTable table_qr, table_gamma;
  if (cfg.options.run_qr)
    table_qr = resolve_table("sup_break", cfg.options.k + 1,
                             cfg.options.epsilon, args.critvals_qr,
                             kDefaultTableSeed, args.threads, &warnings);
  if (cfg.options.run_covar)
    table_gamma = resolve_table("sup_break", 2 * cfg.options.k + 2,
                                cfg.options.epsilon, args.critvals_covar,
                                kDefaultTableSeed, args.threads, &warnings);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  auto cells = sweep_cells(cfg);
  auto records = run_mc_experiment(cells, cfg.options,
                                   cfg.options.run_qr ? &table_qr : nullptr,
                                   cfg.options.run_covar ? &table_gamma : nullptr);
  emit(mc_records_to_csv(records), args.out);
  return 0;
}

struct SignificanceArgs {
  IoArgs io;
  double alpha = 0.9;
  double epsilon = 0.1;
  std::string critvals;
  std::uint64_t seed = kDefaultTableSeed;
  int threads = 0;
};

int run_significance(const SignificanceArgs& args) {
  CsvSchema schema = make_schema(args.io);
  const int k = static_cast<int>(schema.x_cols.size());
  IngestResult ing =
      ingest(args.io.input, schema, min_rows_for_test(k, args.epsilon));
  const int n = static_cast<int>(ing.data.n());
  const GridSpec grid = GridSpec::make(n, args.epsilon);
  QuantilePath fwd = forward_estimates(ing.data, args.alpha, args.epsilon);
  CoefPath path = fwd.coef_path();
  std::vector<std::string> warnings;
  CriticalValueTable table = resolve_table("significance", 1, args.epsilon,
                                           args.critvals, args.seed,
                                           args.threads, &warnings);
  nlohmann::json doc;
  doc["test"] = "significance";
  doc["alpha"] = args.alpha;
  doc["epsilon"] = args.epsilon;
  doc["n"] = n;
  doc["k"] = k;
  nlohmann::json coefs = nlohmann::json::array();
  for (int i = 0; i <= k; ++i) {
    nlohmann::json entry;
    entry["index"] = i;
    entry["name"] = i == 0 ? std::string("(intercept)") : schema.x_cols[i - 1];
    try {
      SignificanceResult res = sn_significance(path, i, grid, &table);
      entry["estimate"] = res.coef;
      entry["t_stat"] = res.t_stat;
      if (res.p_value) entry["p_value"] = *res.p_value;
    } catch (const Error& e) {
      entry["error"] = error_code_name(e.code());
      entry["detail"] = e.detail();
    }
    coefs.push_back(entry);
  }
  doc["coefficients"] = coefs;
  nlohmann::json cvs = nlohmann::json::object();
  for (const auto& [prob, value] : table.quantiles) {
    char key[32];
    std::snprintf(key, sizeof(key), "%.17g", prob);
    cvs[key] = value;
  }
  doc["critical_values"] = cvs;
  doc["warnings"] = warnings;
  emit(doc.dump(2), args.io.out);
  return 0;
}

struct RollingArgs {
  IoArgs io;
  double alpha = 0.9;
  int window = 240;
};

int run_rolling(const RollingArgs& args) {
  CsvSchema schema = make_schema(args.io);
  IngestResult ing = ingest(args.io.input, schema, args.window);
  auto fits = rolling_estimates(ing.data, args.alpha, args.window);
  std::ostringstream out;
  out.precision(17);
  out << "end_index";
  if (!ing.dates.empty()) out << ",end_date";
  out << ",coef_intercept";
  for (const auto& c : schema.x_cols) out << ",coef_" << c;
  out << '\n';
  for (const auto& f : fits) {
    const Eigen::Index end = f.hi - 1;
    out << end;
    if (!ing.dates.empty()) out << ',' << ing.dates[end];
    for (Eigen::Index j = 0; j < f.coef.size(); ++j) out << ',' << f.coef[j];
    out << '\n';
  }
  emit(out.str(), args.io.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-normalized structural-break tests for predictive quantile "
               "and CoVaR regressions"};
  app.require_subcommand(1);

  auto* test = app.add_subcommand("test", "run a structural-break test");
  test->require_subcommand(1);
  TestArgs qr_args, covar_args, two_args, expo_args;
  auto* t_qr = test->add_subcommand("qr", "QR stability test (U_{n,alpha})");
  add_test_options(t_qr, qr_args, false);
  auto* t_covar =
      test->add_subcommand("covar", "CoVaR stability test (U_{n,gamma})");
  add_test_options(t_covar, covar_args, true);
  auto* t_two = test->add_subcommand(
      "covar-two-stage", "Bonferroni two-stage CoVaR stability test");
  add_test_options(t_two, two_args, true);
  t_two->add_option("--critvals-qr", two_args.critvals_qr,
                    "table for the first (QR) stage");
  auto* t_expo = test->add_subcommand(
      "exposure", "exposure-CoVaR test (roles of y and z interchanged)");
  add_test_options(t_expo, expo_args, true);

  CritvalArgs cv_args;
  auto* critvals = app.add_subcommand("critvals",
                                      "simulate critical-value tables");
  critvals->add_option("--dim", cv_args.dim, "coefficient dimension d");
  critvals->add_flag("--scalar", cv_args.scalar,
                     "simulate the scalar significance limit instead");
  critvals->add_option("--epsilon", cv_args.epsilon, "trimming (default 0.1)");
  critvals->add_option("--grid", cv_args.grid,
                       "Brownian-motion grid points (default 5000)");
  critvals->add_option("--reps", cv_args.reps, "replications (default 100000)");
  critvals->add_option("--seed", cv_args.seed, "RNG seed");
  critvals->add_option("--threads", cv_args.threads, "worker cap");
  critvals->add_option("--out", cv_args.out, "table JSON output path");
  critvals->add_flag("--raw,!--no-raw", cv_args.raw,
                     "store the raw sample next to the table (default on)");

  McArgs mc_args;
  auto* mc = app.add_subcommand("mc", "size/power Monte Carlo sweeps");
  mc->add_option("--config", mc_args.config, "sweep configuration file");
  mc->add_option("--mode", mc_args.mode, "size | power");
  mc->add_option("--regime", mc_args.regime, "i0 | ns");
  mc->add_option("--param-list", mc_args.params, "c (i0) or kappa (ns) values");
  mc->add_option("--n-list", mc_args.ns, "sample sizes");
  mc->add_option("--delta-list", mc_args.deltas, "break magnitudes (power)");
  mc->add_option("--s-star", mc_args.s_star, "break fraction (default 0.5)");
  mc->add_option("--reps", mc_args.reps, "replications per cell");
  mc->add_option("--level", mc_args.level, "test level (default 0.05)");
  mc->add_option("--alpha", mc_args.alpha, "quantile level (default 0.9)");
  mc->add_option("--beta", mc_args.beta, "CoVaR level (default 0.9)");
  mc->add_option("--epsilon", mc_args.epsilon, "trimming (default 0.1)");
  mc->add_option("--k", mc_args.k, "predictor count (default 2)");
  mc->add_option("--rho-veps", mc_args.rho_veps,
                 "cross-block correlation (default -0.95/sqrt(2k))");
  mc->add_option("--seed", mc_args.seed, "base seed (replication r uses seed^r)");
  mc->add_option("--threads", mc_args.threads, "worker cap");
  mc->add_option("--critvals-qr", mc_args.critvals_qr, "dim k+1 table");
  mc->add_option("--critvals-covar", mc_args.critvals_covar, "dim 2k+2 table");
  mc->add_option("--out", mc_args.out, "results CSV (default: stdout)");
  mc->add_option("--tests", mc_args.tests, "qr,covar (default both)");

  SignificanceArgs sig_args;
  auto* sig = app.add_subcommand(
      "significance", "self-normalized coefficient significance tests (T_n)");
  add_io_options(sig, sig_args.io, false);
  sig->add_option("--alpha", sig_args.alpha, "quantile level (default 0.9)");
  sig->add_option("--epsilon", sig_args.epsilon, "trimming (default 0.1)");
  sig->add_option("--critvals", sig_args.critvals, "scalar limit table JSON");
  sig->add_option("--seed", sig_args.seed, "seed for on-the-fly tables");
  sig->add_option("--threads", sig_args.threads, "worker cap");

  RollingArgs roll_args;
  auto* roll = app.add_subcommand("rolling",
                                  "rolling-window coefficient estimates");
  add_io_options(roll, roll_args.io, false);
  roll->add_option("--alpha", roll_args.alpha, "quantile level (default 0.9)");
  roll->add_option("--window", roll_args.window, "window length (default 240)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (t_qr->parsed()) return run_qr_test(qr_args);
    if (t_covar->parsed()) return run_covar_test(covar_args, false);
    if (t_two->parsed()) return run_two_stage_test(two_args);
    if (t_expo->parsed()) return run_covar_test(expo_args, true);
    if (critvals->parsed()) return run_critvals(cv_args);
    if (mc->parsed()) return run_mc(mc_args);
    if (sig->parsed()) return run_significance(sig_args);
    if (roll->parsed()) return run_rolling(roll_args);
  } catch (const Error& e) {
    nlohmann::json err{{"error", error_code_name(e.code())},
                       {"detail", e.detail()}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json err{{"error", "Internal"}, {"detail", e.what()}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
  return 1;
}
