#pragma once

#include <string>
#include <vector>

#include "snquant/quantile.hpp"

namespace snquant {

// Fewest selected rows tolerated by the second-stage fit.
inline int min_selected_rows(int k) { return std::max(3 * (k + 1), 8); }

// Two-step CoVaR fit: qr holds the first-stage alpha-quantile fit of y,
// covar_coef the beta-quantile fit of z over the rows where y exceeds its
// fitted quantile.
struct CoVaRFit {
  QuantileFit qr;
  VectorXd covar_coef;
  double covar_objective = 0.0;
  int n_selected = 0;
  double beta = 0.5;
};

// Rows of the window whose first-stage residual exceeds the zero tolerance.
// Ties (|residual| <= tol) are treated as not exceeding.
inline std::vector<Eigen::Index> exceedance_rows(const Dataset& data,
                                                 const QuantileFit& qr) {
  const double tol = zero_residual_tol(
      data.y.segment(qr.lo, qr.hi - qr.lo).cwiseAbs().maxCoeff());
  std::vector<Eigen::Index> rows;
  for (Eigen::Index t = qr.lo; t < qr.hi; ++t) {
    const double resid = data.y[t] - data.X.row(t).dot(qr.coef);
    if (resid > tol) rows.push_back(t);
  }
  return rows;
}

// fit_covar on the window [lo, hi): step 1 fits the alpha-quantile of y,
// step 2 fits the beta-quantile of z on the exceedance rows. `select_all`
// reproduces the VaR degeneracy (no conditioning event).
inline CoVaRFit fit_covar(const Dataset& data, Eigen::Index lo, Eigen::Index hi,
                          double alpha, double beta, bool select_all = false,
                          const QrSolverOptions& opt = {},
                          const VectorXd* qr_init = nullptr,
                          const VectorXd* covar_init = nullptr) {
  require(data.z.has_value(), ErrorCode::MissingZ,
          "CoVaR regression needs the second response z");
  CoVaRFit fit;
  fit.beta = beta;
  fit.qr = fit_quantile(data, lo, hi, alpha, nullptr, opt, qr_init);

  std::vector<Eigen::Index> rows;
  if (select_all) {
    rows.resize(hi - lo);
    for (Eigen::Index t = lo; t < hi; ++t) rows[t - lo] = t;
  } else {
    rows = exceedance_rows(data, fit.qr);
  }
  fit.n_selected = static_cast<int>(rows.size());
  require(fit.n_selected >= min_selected_rows(data.k()),
          ErrorCode::TooFewExceedances,
          "only " + std::to_string(fit.n_selected) + " exceedance rows, need " +
              std::to_string(min_selected_rows(data.k())));
  QuantileFit step2 =
      fit_quantile_rows(data.X, *data.z, rows, beta, lo, hi, opt, covar_init);
  fit.covar_coef = step2.coef;
  fit.covar_objective = step2.objective;
  return fit;
}

// CoVaR fits along a grid; windows whose fit fails become skipped points.
struct CoVaRPath {
  int j_begin = 0;
  std::vector<CoVaRFit> fits;      // coef size 0 marks a skipped window
  std::vector<int> skipped;

  int j_end() const { return j_begin + static_cast<int>(fits.size()) - 1; }
  bool has(int j) const {
    return j >= j_begin && j <= j_end() &&
           fits[j - j_begin].covar_coef.size() > 0;
  }
  const CoVaRFit& at(int j) const { return fits[j - j_begin]; }

  // Stacked gamma = (alpha_coef', beta_coef')' path for the U_{n,gamma} test.
  CoefPath stacked_path() const {
    CoefPath p;
    p.j_begin = j_begin;
    p.skipped = skipped;
    p.coefs.reserve(fits.size());
    for (const auto& f : fits) {
      if (f.covar_coef.size() == 0) {
        p.coefs.emplace_back();
        continue;
      }
      VectorXd g(f.qr.coef.size() + f.covar_coef.size());
      g << f.qr.coef, f.covar_coef;
      p.coefs.push_back(std::move(g));
    }
    return p;
  }

  // Second-stage coefficients only, for the U_{n,beta} stage.
  CoefPath covar_path() const {
    CoefPath p;
    p.j_begin = j_begin;
    p.skipped = skipped;
    p.coefs.reserve(fits.size());
    for (const auto& f : fits) p.coefs.push_back(f.covar_coef);
    return p;
  }
};

namespace detail {
template <typename FitFn>
CoVaRPath covar_grid(int j_begin, int j_end, FitFn&& fit_at) {
  CoVaRPath path;
  path.j_begin = j_begin;
  path.fits.resize(j_end - j_begin + 1);
  for (int j = j_begin; j <= j_end; ++j) {
    try {
      path.fits[j - j_begin] = fit_at(j);
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::TooFewExceedances:
        case ErrorCode::RankDeficientDesign:
        case ErrorCode::SolverNonConvergence:
          path.skipped.push_back(j);
          break;
        default:
          fail(e.code(), "grid index " + std::to_string(j) + ": " + e.detail());
      }
    }
  }
  return path;
}
}  // namespace detail

inline CoVaRPath forward_covar_estimates(const Dataset& data, double alpha,
                                         double beta, double epsilon,
                                         const QrSolverOptions& opt = {}) {
  require(data.z.has_value(), ErrorCode::MissingZ,
          "CoVaR regression needs the second response z");
  const int n = static_cast<int>(data.n());
  const int j0 = static_cast<int>(std::floor(n * epsilon));
  require(j0 >= min_window_length(data.k()), ErrorCode::WindowTooShort,
          "floor(n*epsilon) below the minimum window length");
  CoVaRFit full = fit_covar(data, 0, n, alpha, beta, false, opt);
  return detail::covar_grid(j0, n, [&](int j) {
    if (j == n) return full;
    return fit_covar(data, 0, j, alpha, beta, false, opt, &full.qr.coef,
                     &full.covar_coef);
  });
}

inline CoVaRPath backward_covar_estimates(const Dataset& data, double alpha,
                                          double beta, double epsilon,
                                          const QrSolverOptions& opt = {}) {
  require(data.z.has_value(), ErrorCode::MissingZ,
          "CoVaR regression needs the second response z");
  const int n = static_cast<int>(data.n());
  const int j0 = static_cast<int>(std::floor(n * epsilon));
  require(j0 >= min_window_length(data.k()), ErrorCode::WindowTooShort,
          "floor(n*epsilon) below the minimum window length");
  CoVaRFit full = fit_covar(data, 0, n, alpha, beta, false, opt);
  return detail::covar_grid(0, n - j0, [&](int j) {
    if (j == 0) return full;
    return fit_covar(data, j, n, alpha, beta, false, opt, &full.qr.coef,
                     &full.covar_coef);
  });
}

}  // namespace snquant
