#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "snquant/covar.hpp"
#include "snquant/dgp.hpp"
#include "snquant/errors.hpp"
#include "snquant/parallel.hpp"
#include "snquant/sn.hpp"
#include "snquant/strings.hpp"
#include "snquant/tables.hpp"

namespace snquant {

// Second-stage fits along an already-computed first-stage path; windows with
// too few exceedances (or a failed fit) become skipped grid points. Returns
// the stacked (alpha', beta')' coefficient path for U_{n,gamma}.
inline CoefPath stacked_path_from_qr(const Dataset& data,
                                     const QuantilePath& qr, double beta,
                                     const QrSolverOptions& opt = {},
                                     const VectorXd* warm = nullptr) {
  require(data.z.has_value(), ErrorCode::MissingZ,
          "stacked path needs the second response z");
  CoefPath out;
  out.j_begin = qr.j_begin;
  out.coefs.reserve(qr.fits.size());
  const int min_rows = min_selected_rows(data.k());
  for (std::size_t i = 0; i < qr.fits.size(); ++i) {
    const QuantileFit& f = qr.fits[i];
    const int j = qr.j_begin + static_cast<int>(i);
    auto rows = exceedance_rows(data, f);
    if (static_cast<int>(rows.size()) < min_rows) {
      out.coefs.emplace_back();
      out.skipped.push_back(j);
      continue;
    }
    try {
      QuantileFit step2 =
          fit_quantile_rows(data.X, *data.z, rows, beta, f.lo, f.hi, opt, warm);
      VectorXd g(f.coef.size() + step2.coef.size());
      g << f.coef, step2.coef;
      out.coefs.push_back(std::move(g));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::RankDeficientDesign ||
          e.code() == ErrorCode::SolverNonConvergence) {
        out.coefs.emplace_back();
        out.skipped.push_back(j);
      } else {
        throw;
      }
    }
  }
  return out;
}

struct McCell {
  PredictorRegime regime = PredictorRegime::I0;
  double param = 0.5;  // c for I0, kappa for NS
  int n = 1000;
  double delta = 0.0;
  double s_star = 0.5;
};

struct McOptions {
  int k = 2;
  double alpha = 0.9;
  double beta = 0.9;
  double epsilon = 0.1;
  double phi = -0.95;
  double rho_v = 0.0;
  double rho_eps = 0.0;
  std::optional<double> rho_veps;  // default: scaled_cross_correlation(k)
  int reps = 1000;
  double level = 0.05;
  std::uint64_t seed = 1;
  int threads = 0;
  bool run_qr = true;
  bool run_covar = true;

  double cross_correlation() const {
    return rho_veps ? *rho_veps : scaled_cross_correlation(k);
  }
};

struct McRecord {
  std::string regime;
  double param = 0.0;
  int n = 0;
  double delta = 0.0;
  double s_star = 0.0;
  std::string test;  // "qr" (U_{n,alpha}) or "covar" (U_{n,gamma})
  double level = 0.0;
  int reps = 0;
  int rejections = 0;
  double rate = 0.0;
  double se = 0.0;
  int failures = 0;
};

namespace detail {
enum class RepOutcome : unsigned char { Retain = 0, Reject = 1, Failed = 2 };

inline McRecord summarize(const McCell& cell, const McOptions& opt,
                          const std::string& test,
                          const std::vector<RepOutcome>& outcomes) {
  McRecord rec;
  rec.regime = regime_name(cell.regime);
  rec.param = cell.param;
  rec.n = cell.n;
  rec.delta = cell.delta;
  rec.s_star = cell.s_star;
  rec.test = test;
  rec.level = opt.level;
  rec.reps = static_cast<int>(outcomes.size());
  for (auto o : outcomes) {
    if (o == RepOutcome::Reject) ++rec.rejections;
    if (o == RepOutcome::Failed) ++rec.failures;
  }
  const int valid = rec.reps - rec.failures;
  rec.rate = valid > 0 ? static_cast<double>(rec.rejections) / valid : 0.0;
  rec.se = valid > 0 ? std::sqrt(rec.rate * (1.0 - rec.rate) / valid) : 0.0;
  return rec;
}
}  // namespace detail

inline DgpConfig cell_config(const McCell& cell, const McOptions& opt) {
  DgpConfig cfg;
  cfg.n = cell.n;
  cfg.k = opt.k;
  cfg.alpha = opt.alpha;
  cfg.beta = opt.beta;
  cfg.regime = cell.regime;
  if (cell.regime == PredictorRegime::I0)
    cfg.c = cell.param;
  else
    cfg.kappa = cell.param;
  cfg.phi = opt.phi;
  cfg.rho_v = opt.rho_v;
  cfg.rho_eps = opt.rho_eps;
  cfg.rho_veps = opt.cross_correlation();
  if (cell.delta != 0.0) cfg.break_spec = BreakSpec{cell.s_star, cell.delta};
  return cfg;
}

// One sweep: for each cell, generate `reps` datasets (replication r uses
// substream seed ^ r, shared across cells for common random numbers), run the
// chosen break tests at `level`, and record rejection frequencies.
inline std::vector<McRecord> run_mc_experiment(
    const std::vector<McCell>& cells, const McOptions& opt,
    const CriticalValueTable* table_qr, const CriticalValueTable* table_gamma) {
  require(opt.reps >= 1, ErrorCode::InvalidParameter, "reps must be >= 1");
  require(!opt.run_qr || table_qr, ErrorCode::InvalidParameter,
          "QR test requested without a dim k+1 table");
  require(!opt.run_covar || table_gamma, ErrorCode::InvalidParameter,
          "CoVaR test requested without a dim 2k+2 table");
  const double cv_qr = opt.run_qr ? table_qr->quantile(1.0 - opt.level) : 0.0;
  const double cv_gamma =
      opt.run_covar ? table_gamma->quantile(1.0 - opt.level) : 0.0;
  if (opt.run_qr)
    require(table_qr->dim == opt.k + 1, ErrorCode::DimensionMismatch,
            "QR table dimension must be k+1");
  if (opt.run_covar)
    require(table_gamma->dim == 2 * opt.k + 2, ErrorCode::DimensionMismatch,
            "CoVaR table dimension must be 2k+2");

  std::vector<McRecord> records;
  for (const auto& cell : cells) {
    std::vector<detail::RepOutcome> qr_out(opt.reps, detail::RepOutcome::Failed);
    std::vector<detail::RepOutcome> covar_out(opt.reps,
                                              detail::RepOutcome::Failed);
    DgpConfig base_cfg = cell_config(cell, opt);
    const GridSpec grid = GridSpec::make(cell.n, opt.epsilon);
    parallel_for(static_cast<std::size_t>(opt.reps), opt.threads,
                 [&](std::size_t r) {
      DgpConfig cfg = base_cfg;
      cfg.seed = opt.seed ^ static_cast<std::uint64_t>(r);
      Dataset data;
      QuantilePath fwd, bwd;
      try {
        data = generate(cfg);
        fwd = forward_estimates(data, opt.alpha, opt.epsilon);
        bwd = backward_estimates(data, opt.alpha, opt.epsilon);
      } catch (const Error&) {
        return;  // both outcomes stay Failed
      }
      if (opt.run_qr) {
        try {
          BreakTestResult res =
              sn_break_statistic(fwd.coef_path(), bwd.coef_path(), grid);
          qr_out[r] = res.statistic > cv_qr ? detail::RepOutcome::Reject
                                            : detail::RepOutcome::Retain;
        } catch (const Error&) {
        }
      }
      if (opt.run_covar) {
        try {
          CoefPath gf = stacked_path_from_qr(data, fwd, opt.beta);
          CoefPath gb = stacked_path_from_qr(data, bwd, opt.beta);
          BreakTestResult res = sn_break_statistic(gf, gb, grid);
          covar_out[r] = res.statistic > cv_gamma ? detail::RepOutcome::Reject
                                                  : detail::RepOutcome::Retain;
        } catch (const Error&) {
        }
      }
    });
    if (opt.run_qr)
      records.push_back(detail::summarize(cell, opt, "qr", qr_out));
    if (opt.run_covar)
      records.push_back(detail::summarize(cell, opt, "covar", covar_out));
  }
  return records;
}

inline std::vector<McRecord> run_size_experiment(
    const std::vector<McCell>& cells, const McOptions& opt,
    const CriticalValueTable* table_qr, const CriticalValueTable* table_gamma) {
  std::vector<McCell> null_cells = cells;
  for (auto& c : null_cells) c.delta = 0.0;
  return run_mc_experiment(null_cells, opt, table_qr, table_gamma);
}

inline std::vector<McRecord> run_power_experiment(
    const std::vector<McCell>& cells, const McOptions& opt,
    const CriticalValueTable* table_qr, const CriticalValueTable* table_gamma) {
  return run_mc_experiment(cells, opt, table_qr, table_gamma);
}

inline std::string mc_records_to_csv(const std::vector<McRecord>& records) {
  std::ostringstream out;
  out << "regime,param,n,delta,s_star,test,level,reps,rejections,rate,se,failures\n";
  out.precision(17);
  for (const auto& r : records) {
    out << r.regime << ',' << r.param << ',' << r.n << ',' << r.delta << ','
        << r.s_star << ',' << r.test << ',' << r.level << ',' << r.reps << ','
        << r.rejections << ',' << r.rate << ',' << r.se << ',' << r.failures
        << '\n';
  }
  return out.str();
}

// Sweep configuration file: versioned key = value lines, comma-separated
// lists for the sweep axes, '#' comments.
struct McSweepConfig {
  std::string mode = "size";  // "size" | "power"
  PredictorRegime regime = PredictorRegime::I0;
  std::vector<double> params{0.5};
  std::vector<int> ns{1000};
  std::vector<double> deltas{0.0};
  double s_star = 0.5;
  McOptions options;
};

namespace detail {

inline double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    require(pos == s.size(), ErrorCode::InvalidParameter,
            "bad numeric value for " + key + ": '" + s + "'");
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidParameter,
         "bad numeric value for " + key + ": '" + s + "'");
  }
}

}  // namespace detail

inline McSweepConfig parse_mc_config(std::istream& in) {
  McSweepConfig cfg;
  bool saw_version = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::SchemaMismatch,
            "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "version") {
      require(value == "1", ErrorCode::SchemaMismatch,
              "unsupported sweep config version " + value);
      saw_version = true;
    } else if (key == "mode") {
      require(value == "size" || value == "power", ErrorCode::InvalidParameter,
              "mode must be size or power");
      cfg.mode = value;
    } else if (key == "regime") {
      require(value == "i0" || value == "ns", ErrorCode::InvalidParameter,
              "regime must be i0 or ns");
      cfg.regime = value == "i0" ? PredictorRegime::I0 : PredictorRegime::NS;
    } else if (key == "param") {
      cfg.params.clear();
      for (const auto& v : detail::split_list(value))
        cfg.params.push_back(detail::parse_double(v, key));
    } else if (key == "n") {
      cfg.ns.clear();
      for (const auto& v : detail::split_list(value))
        cfg.ns.push_back(static_cast<int>(detail::parse_double(v, key)));
    } else if (key == "delta") {
      cfg.deltas.clear();
      for (const auto& v : detail::split_list(value))
        cfg.deltas.push_back(detail::parse_double(v, key));
    } else if (key == "s_star") {
      cfg.s_star = detail::parse_double(value, key);
    } else if (key == "k") {
      cfg.options.k = static_cast<int>(detail::parse_double(value, key));
    } else if (key == "alpha") {
      cfg.options.alpha = detail::parse_double(value, key);
    } else if (key == "beta") {
      cfg.options.beta = detail::parse_double(value, key);
    } else if (key == "epsilon") {
      cfg.options.epsilon = detail::parse_double(value, key);
    } else if (key == "phi") {
      cfg.options.phi = detail::parse_double(value, key);
    } else if (key == "rho_v") {
      cfg.options.rho_v = detail::parse_double(value, key);
    } else if (key == "rho_eps") {
      cfg.options.rho_eps = detail::parse_double(value, key);
    } else if (key == "rho_veps") {
      cfg.options.rho_veps = detail::parse_double(value, key);
    } else if (key == "reps") {
      cfg.options.reps = static_cast<int>(detail::parse_double(value, key));
    } else if (key == "level") {
      cfg.options.level = detail::parse_double(value, key);
    } else if (key == "seed") {
      cfg.options.seed =
          static_cast<std::uint64_t>(detail::parse_double(value, key));
    } else if (key == "tests") {
      cfg.options.run_qr = false;
      cfg.options.run_covar = false;
      for (const auto& v : detail::split_list(value)) {
        if (v == "qr")
          cfg.options.run_qr = true;
        else if (v == "covar")
          cfg.options.run_covar = true;
        else
          fail(ErrorCode::InvalidParameter, "unknown test '" + v + "'");
      }
    } else {
      fail(ErrorCode::InvalidParameter,
           "unknown sweep config key '" + key + "'");
    }
  }
  require(saw_version, ErrorCode::SchemaMismatch,
          "sweep config missing version field");
  return cfg;
}

inline McSweepConfig parse_mc_config_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open " + path);
  return parse_mc_config(in);
}

inline std::vector<McCell> sweep_cells(const McSweepConfig& cfg) {
  std::vector<McCell> cells;
  for (double param : cfg.params)
    for (int n : cfg.ns)
      for (double delta : cfg.mode == "power" ? cfg.deltas
                                              : std::vector<double>{0.0})
        cells.push_back({cfg.regime, param, n, delta, cfg.s_star});
  return cells;
}

}  // namespace snquant
