#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "snquant/errors.hpp"

namespace snquant {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Pinball (check) loss: u * (alpha - 1{u<0}). Nonnegative, zero iff u == 0.
inline double pinball_loss(double u, double alpha) {
  return u * (alpha - (u < 0.0 ? 1.0 : 0.0));
}

// Subgradient of the pinball loss: alpha - 1{u<=0}.
inline double psi(double u, double alpha) {
  return alpha - (u <= 0.0 ? 1.0 : 0.0);
}

// Shortest subsample a fit accepts; keeps every window well-posed.
inline int min_window_length(int k) { return std::max(5 * (k + 1), 10); }

// Scale-aware classification tolerance for zero residuals.
inline double zero_residual_tol(double max_abs_y) {
  return 1e-8 * (1.0 + max_abs_y);
}

// Response y (and optional second response z for CoVaR) with the design
// matrix X, column 0 identically one. Row t pairs y[t] with the lagged
// predictors, i.e. (Y_t, X_{t-1}).
struct Dataset {
  VectorXd y;
  std::optional<VectorXd> z;
  MatrixXd X;

  Eigen::Index n() const { return y.size(); }
  int k() const { return static_cast<int>(X.cols()) - 1; }

  void validate() const {
    require(X.rows() == y.size(), ErrorCode::DimensionMismatch,
            "X rows != y length");
    require(X.cols() >= 1, ErrorCode::InvalidParameter, "X has no columns");
    require((X.col(0).array() == 1.0).all(), ErrorCode::InvalidParameter,
            "X column 0 must be identically 1");
    require(y.allFinite() && X.allFinite(), ErrorCode::InvalidParameter,
            "non-finite values in y or X");
    if (z) {
      require(z->size() == y.size(), ErrorCode::DimensionMismatch,
              "z length != y length");
      require(z->allFinite(), ErrorCode::InvalidParameter,
              "non-finite values in z");
    }
  }
};

struct QuantileFit {
  VectorXd coef;
  Eigen::Index lo = 0, hi = 0;  // window [lo, hi)
  double alpha = 0.5;
  double objective = 0.0;
  int n_active = 0;  // residuals within the zero tolerance
  int iterations = 0;
};

struct QrSolverOptions {
  double gap_tol = 1e-9;  // relative duality gap
  int max_iter = 200;
};

namespace detail {

inline double pinball_sum(const RowMatrixXd& A, const VectorXd& b,
                          const VectorXd& theta, double alpha) {
  double s = 0.0;
  VectorXd r = b - A * theta;
  for (Eigen::Index t = 0; t < r.size(); ++t) s += pinball_loss(r[t], alpha);
  return s;
}

// Primal-dual interior point (Mehrotra predictor-corrector) for
//   min_theta sum_t rho_alpha(b_t - a_t' theta)
// via the LP  min alpha 1'u + (1-alpha) 1'w  s.t.  A theta + u - w = b.
// Returns an interior near-optimum; purify() below finishes to a vertex.
inline VectorXd ip_solve(const RowMatrixXd& A, const VectorXd& b, double alpha,
                         const QrSolverOptions& opt, const VectorXd* theta_init,
                         int& iterations_out) {
  const Eigen::Index n = A.rows(), p = A.cols();
  VectorXd theta(p);
  if (theta_init && theta_init->size() == p && theta_init->allFinite()) {
    theta = *theta_init;
  } else {
    theta = (A.transpose() * A).ldlt().solve(A.transpose() * b);
  }
  VectorXd r = b - A * theta;
  const double c0 = 1.0 + 0.1 * r.cwiseAbs().mean();
  VectorXd u = r.cwiseMax(0.0).array() + c0;
  VectorXd w = (-r).cwiseMax(0.0).array() + c0;
  VectorXd d = VectorXd::Zero(n);
  VectorXd su = VectorXd::Constant(n, alpha);
  VectorXd sw = VectorXd::Constant(n, 1.0 - alpha);

  VectorXd invD(n), rhs1(n), dd(n), du(n), dw(n), rcu(n), rcw(n);
  VectorXd dtheta(p), rhs_theta(p), r2(p);
  MatrixXd M(p, p);
  const double step_frac = 0.9995;
  double best_gap = std::numeric_limits<double>::infinity();
  int best_iter = 0;

  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    iterations_out = iter;
    const double primal = alpha * u.sum() + (1.0 - alpha) * w.sum();
    const double dual = b.dot(d);
    const double gap = primal - dual;
    if (gap <= opt.gap_tol * (1.0 + std::fabs(primal))) return theta;
    // endgame stall: stop refining and let the crossover finish the job
    if (gap < 0.9 * best_gap) {
      best_gap = gap;
      best_iter = iter;
    } else if (iter - best_iter >= 15) {
      return theta;
    }

    r = b - A * theta;
    const VectorXd r1 = r - u + w;  // stays ~0; kept for robustness
    r2.noalias() = -(A.transpose() * d);
    invD = (u.cwiseQuotient(su) + w.cwiseQuotient(sw)).cwiseInverse();
    M.noalias() = A.transpose() * invD.asDiagonal() * A;
    Eigen::LLT<MatrixXd> llt(M);
    Eigen::LDLT<MatrixXd> ldlt;
    const bool use_llt = (llt.info() == Eigen::Success);
    if (!use_llt) ldlt.compute(M);

    auto solve_step = [&](const VectorXd& rc_u, const VectorXd& rc_w) {
      rhs1 = r1 - rc_u.cwiseQuotient(su) + rc_w.cwiseQuotient(sw);
      rhs_theta.noalias() = A.transpose() * invD.cwiseProduct(rhs1) - r2;
      if (use_llt)
        dtheta = llt.solve(rhs_theta);
      else
        dtheta = ldlt.solve(rhs_theta);
      dd = invD.cwiseProduct(rhs1 - A * dtheta);
      du = (rc_u + u.cwiseProduct(dd)).cwiseQuotient(su);
      dw = (rc_w - w.cwiseProduct(dd)).cwiseQuotient(sw);
    };
    auto step_lengths = [&](double& ap, double& ad) {
      ap = 1.0;
      ad = 1.0;
      for (Eigen::Index t = 0; t < n; ++t) {
        if (du[t] < 0.0) ap = std::min(ap, -step_frac * u[t] / du[t]);
        if (dw[t] < 0.0) ap = std::min(ap, -step_frac * w[t] / dw[t]);
        if (dd[t] > 0.0) ad = std::min(ad, step_frac * su[t] / dd[t]);
        if (dd[t] < 0.0) ad = std::min(ad, -step_frac * sw[t] / dd[t]);
      }
    };

    // predictor
    rcu = -u.cwiseProduct(su);
    rcw = -w.cwiseProduct(sw);
    solve_step(rcu, rcw);
    double ap, ad;
    step_lengths(ap, ad);
    const double mu = (u.dot(su) + w.dot(sw)) / (2.0 * n);
    const double mu_aff = ((u + ap * du).dot(su - ad * dd) +
                           (w + ap * dw).dot(sw + ad * dd)) /
                          (2.0 * n);
    double sigma = mu > 0.0 ? std::pow(mu_aff / mu, 3) : 0.0;
    sigma = std::clamp(sigma, 0.0, 1.0);

    // corrector
    rcu = (VectorXd::Constant(n, sigma * mu) - u.cwiseProduct(su) +
           du.cwiseProduct(dd));
    rcw = (VectorXd::Constant(n, sigma * mu) - w.cwiseProduct(sw) -
           dw.cwiseProduct(dd));
    solve_step(rcu, rcw);
    step_lengths(ap, ad);

    theta += ap * dtheta;
    u += ap * du;
    w += ap * dw;
    d += ad * dd;
    su = VectorXd::Constant(n, alpha) - d;
    sw = VectorXd::Constant(n, 1.0 - alpha) + d;
  }
  // iteration cap: the crossover verifies vertex optimality and raises
  // SolverNonConvergence if it cannot certify a minimizer
  return theta;
}

// Objective directional derivative along v at theta with residuals r:
// inactive rows contribute g_t (1{r_t<0} - alpha), active rows the kink
// slope |g_t| ((g_t>0) ? 1-alpha : alpha).
inline double directional_derivative(const RowMatrixXd& A, const VectorXd& r,
                                     const VectorXd& v, double alpha,
                                     double tol_zero, double g_tol) {
  double D = 0.0;
  const Eigen::Index n = A.rows();
  VectorXd g = A * v;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (std::fabs(g[t]) <= g_tol) continue;
    if (std::fabs(r[t]) <= tol_zero) {
      D += std::fabs(g[t]) * (g[t] > 0.0 ? (1.0 - alpha) : alpha);
    } else {
      D += g[t] * ((r[t] < 0.0 ? 1.0 : 0.0) - alpha);
    }
  }
  return D;
}

// First positive kink along v: min over inactive rows of r_t / g_t > 0.
inline bool ratio_step(const RowMatrixXd& A, const VectorXd& r,
                       const VectorXd& v, double tol_zero, double g_tol,
                       double& gamma_out) {
  const Eigen::Index n = A.rows();
  VectorXd g = A * v;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < n; ++t) {
    if (std::fabs(r[t]) <= tol_zero || std::fabs(g[t]) <= g_tol) continue;
    const double gamma = r[t] / g[t];
    if (gamma > 0.0 && gamma < best) best = gamma;
  }
  if (!std::isfinite(best)) return false;
  gamma_out = best;
  return true;
}

inline Eigen::Index first_nonzero(const VectorXd& v, double tol) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (std::fabs(v[i]) > tol) return i;
  return -1;
}

// Rows of A with |residual| <= tol_zero.
inline std::vector<Eigen::Index> active_rows(const VectorXd& r,
                                             double tol_zero) {
  std::vector<Eigen::Index> Z;
  for (Eigen::Index t = 0; t < r.size(); ++t)
    if (std::fabs(r[t]) <= tol_zero) Z.push_back(t);
  return Z;
}

// Select p independent rows among the active set (column-pivoted QR of the
// transposed submatrix); returns sorted absolute row ids.
inline std::vector<Eigen::Index> select_basis(const RowMatrixXd& A,
                                              const std::vector<Eigen::Index>& Z,
                                              Eigen::Index p) {
  MatrixXd Zt(p, static_cast<Eigen::Index>(Z.size()));
  for (std::size_t c = 0; c < Z.size(); ++c) Zt.col(c) = A.row(Z[c]).transpose();
  Eigen::ColPivHouseholderQR<MatrixXd> qr(Zt);
  qr.setThreshold(1e-10);
  require(qr.rank() == p, ErrorCode::SolverNonConvergence,
          "active set lost rank during purification");
  std::vector<Eigen::Index> h(p);
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index i = 0; i < p; ++i) h[i] = Z[perm[i]];
  std::sort(h.begin(), h.end());
  return h;
}

// theta_a < theta_b lexicographically, with a scale-aware tolerance on the
// deciding component.
inline bool lex_less(const VectorXd& a, const VectorXd& b, double tol) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] < b[i] - tol) return true;
    if (a[i] > b[i] + tol) return false;
  }
  return false;
}

// Crossover from the interior-point solution to an optimal vertex:
// (1) walk null directions of the active set until p independent rows are
//     active, never increasing the objective;
// (2) snap to the basis solve and run finishing simplex pivots until no
//     descent direction remains;
// (3) among optimal vertices connected by flat edges, walk to the
//     lexicographically smallest coefficient vector.
inline VectorXd purify(const RowMatrixXd& A, const VectorXd& b, double alpha,
                       VectorXd theta) {
  const Eigen::Index n = A.rows(), p = A.cols();
  const double tol_zero = zero_residual_tol(b.cwiseAbs().maxCoeff());
  const double scale_A = 1.0 + A.cwiseAbs().sum() / static_cast<double>(n);
  const double dir_tol = 1e-9 * scale_A * static_cast<double>(n);
  const double g_tol = 1e-13 * scale_A;
  const int cap = 60 + 8 * static_cast<int>(p);

  for (int round = 0; round < cap; ++round) {
    VectorXd r = b - A * theta;
    auto Z = active_rows(r, tol_zero);

    MatrixXd AZ(static_cast<Eigen::Index>(Z.size()), p);
    for (std::size_t i = 0; i < Z.size(); ++i) AZ.row(i) = A.row(Z[i]);
    Eigen::FullPivLU<MatrixXd> lu(AZ);
    lu.setThreshold(1e-10);
    const Eigen::Index rank = Z.empty() ? 0 : lu.rank();

    if (rank < p) {
      VectorXd v;
      if (Z.empty()) {
        v = VectorXd::Unit(p, 0);
      } else {
        v = lu.kernel().col(0);
      }
      const Eigen::Index fnz = first_nonzero(v, 1e-12 * v.cwiseAbs().maxCoeff());
      require(fnz >= 0, ErrorCode::SolverNonConvergence, "null direction vanished");
      v /= v[fnz];  // first nonzero component = +1
      double D = directional_derivative(A, r, v, alpha, tol_zero, g_tol);
      if (D > dir_tol) {
        v = -v;
      } else if (D >= -dir_tol) {
        v = -v;  // flat edge: move toward the lexicographically smaller end
      }
      double gamma;
      if (!ratio_step(A, r, v, tol_zero, g_tol, gamma)) {
        v = -v;
        require(ratio_step(A, r, v, tol_zero, g_tol, gamma),
                ErrorCode::SolverNonConvergence, "no kink along null direction");
      }
      theta += gamma * v;
      continue;
    }

    // snap exactly onto the vertex defined by the basis rows
    auto h = select_basis(A, Z, p);
    MatrixXd B(p, p);
    VectorXd bh(p);
    for (Eigen::Index i = 0; i < p; ++i) {
      B.row(i) = A.row(h[i]);
      bh[i] = b[h[i]];
    }
    Eigen::PartialPivLU<MatrixXd> blu(B);
    theta = blu.solve(bh);
    r = b - A * theta;
    Z = active_rows(r, tol_zero);
    const double obj = pinball_sum(A, b, theta, alpha);
    const double impr_tol = 1e-12 * (1.0 + std::fabs(obj));
    const double flat_tol = 1e-10 * (1.0 + std::fabs(obj));
    const double lex_tol = 1e-9 * (1.0 + theta.cwiseAbs().maxCoeff());

    // signed edge directions, unit inf-norm, ranked by directional derivative
    MatrixXd Binv = blu.inverse();
    struct Edge {
      double D;
      int rank;
      VectorXd v;
    };
    std::vector<Edge> edges;
    edges.reserve(2 * p);
    for (Eigen::Index i = 0; i < p; ++i) {
      for (int sign = 0; sign < 2; ++sign) {
        VectorXd v = (sign == 0 ? 1.0 : -1.0) * Binv.col(i);
        const double norm = v.cwiseAbs().maxCoeff();
        if (norm <= 0.0) continue;
        v /= norm;
        const double D = directional_derivative(A, r, v, alpha, tol_zero, g_tol);
        edges.push_back({D, static_cast<int>(2 * i) + sign, std::move(v)});
      }
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
      return a.D != b.D ? a.D < b.D : a.rank < b.rank;
    });

    // a move counts only if the recomputed objective actually drops; this
    // rules out cycling across micro-kinks at near-degenerate vertices
    bool moved = false;
    for (const Edge& e : edges) {
      if (e.D >= -dir_tol) break;
      double gamma;
      if (!ratio_step(A, r, e.v, tol_zero, g_tol, gamma)) continue;
      VectorXd cand = theta + gamma * e.v;
      if (pinball_sum(A, b, cand, alpha) < obj - impr_tol) {
        theta = std::move(cand);
        moved = true;
        break;
      }
    }
    if (moved) continue;

    // optimal: walk flat edges toward the lexicographically smallest vertex
    for (const Edge& e : edges) {
      if (std::fabs(e.D) > dir_tol) continue;
      const Eigen::Index fnz = first_nonzero(e.v, 1e-9);
      if (fnz < 0 || e.v[fnz] > 0.0) continue;
      double gamma;
      if (!ratio_step(A, r, e.v, tol_zero, g_tol, gamma)) continue;
      if (gamma <= 1e-11 * (1.0 + theta.cwiseAbs().maxCoeff())) continue;
      VectorXd cand = theta + gamma * e.v;
      if (pinball_sum(A, b, cand, alpha) <= obj + flat_tol &&
          lex_less(cand, theta, lex_tol)) {
        theta = std::move(cand);
        moved = true;
        break;
      }
    }
    if (moved) continue;
    return theta;
  }
  fail(ErrorCode::SolverNonConvergence, "purification did not settle on a vertex");
}

}  // namespace detail

// Exact quantile-regression fit on the rows listed in `rows` of (X, target).
// Interior point to relative gap 1e-9, then crossover to a deterministic
// optimal vertex (lexicographically smallest among ties).
inline QuantileFit fit_quantile_rows(const MatrixXd& X, const VectorXd& target,
                                     const std::vector<Eigen::Index>& rows,
                                     double alpha, Eigen::Index lo, Eigen::Index hi,
                                     const QrSolverOptions& opt = {},
                                     const VectorXd* theta_init = nullptr) {
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidParameter,
          "alpha must lie in (0,1)");
  const Eigen::Index p = X.cols();
  const auto nr = static_cast<Eigen::Index>(rows.size());
  require(nr >= p + 1, ErrorCode::WindowTooShort,
          "need at least k+2 rows, got " + std::to_string(nr));

  RowMatrixXd A(nr, p);
  VectorXd b(nr);
  for (Eigen::Index i = 0; i < nr; ++i) {
    A.row(i) = X.row(rows[i]);
    b[i] = target[rows[i]];
  }
  {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(A);
    require(qr.rank() == p, ErrorCode::RankDeficientDesign,
            "design submatrix is rank deficient on the selected rows");
  }

  QuantileFit fit;
  fit.lo = lo;
  fit.hi = hi;
  fit.alpha = alpha;
  VectorXd theta = detail::ip_solve(A, b, alpha, opt, theta_init, fit.iterations);
  theta = detail::purify(A, b, alpha, theta);
  fit.coef = theta;
  fit.objective = detail::pinball_sum(A, b, theta, alpha);
  const double tol = zero_residual_tol(b.cwiseAbs().maxCoeff());
  const VectorXd r = b - A * theta;
  fit.n_active = static_cast<int>(detail::active_rows(r, tol).size());
  return fit;
}

// Fit on the contiguous window [lo, hi) of the dataset; `mask`, when given,
// selects a subset of window rows (absolute indices).
inline QuantileFit fit_quantile(const Dataset& data, Eigen::Index lo,
                                Eigen::Index hi, double alpha,
                                const std::vector<Eigen::Index>* mask = nullptr,
                                const QrSolverOptions& opt = {},
                                const VectorXd* theta_init = nullptr) {
  require(lo >= 0 && hi <= data.n() && lo < hi, ErrorCode::InvalidParameter,
          "window out of range");
  std::vector<Eigen::Index> rows;
  if (mask) {
    for (auto t : *mask)
      if (t >= lo && t < hi) rows.push_back(t);
  } else {
    require(hi - lo >= min_window_length(data.k()), ErrorCode::WindowTooShort,
            "window length " + std::to_string(hi - lo) + " below minimum " +
                std::to_string(min_window_length(data.k())));
    rows.resize(hi - lo);
    for (Eigen::Index t = lo; t < hi; ++t) rows[t - lo] = t;
  }
  return fit_quantile_rows(data.X, data.y, rows, alpha, lo, hi, opt, theta_init);
}

// Coefficient estimates indexed by a grid boundary j; an empty coef marks a
// skipped window.
struct CoefPath {
  int j_begin = 0;
  std::vector<VectorXd> coefs;
  std::vector<int> skipped;

  int j_end() const { return j_begin + static_cast<int>(coefs.size()) - 1; }
  bool has(int j) const {
    return j >= j_begin && j <= j_end() && coefs[j - j_begin].size() > 0;
  }
  const VectorXd& at(int j) const { return coefs[j - j_begin]; }
};

struct QuantilePath {
  int j_begin = 0;
  std::vector<QuantileFit> fits;

  const QuantileFit& at(int j) const { return fits[j - j_begin]; }
  CoefPath coef_path() const {
    CoefPath p;
    p.j_begin = j_begin;
    p.coefs.reserve(fits.size());
    for (const auto& f : fits) p.coefs.push_back(f.coef);
    return p;
  }
};

namespace detail {
template <typename FitFn>
QuantilePath estimate_grid(int j_begin, int j_end, FitFn&& fit_at) {
  QuantilePath path;
  path.j_begin = j_begin;
  path.fits.resize(j_end - j_begin + 1);
  for (int j = j_begin; j <= j_end; ++j) {
    try {
      path.fits[j - j_begin] = fit_at(j);
    } catch (const Error& e) {
      fail(e.code(), "grid index " + std::to_string(j) + ": " + e.detail());
    }
  }
  return path;
}
}  // namespace detail

// alpha_hat(0, j/n) for every j in [floor(n*eps), n]; entry j fits [0, j).
inline QuantilePath forward_estimates(const Dataset& data, double alpha,
                                      double epsilon,
                                      const QrSolverOptions& opt = {}) {
  require(epsilon > 0.0 && epsilon < 0.5, ErrorCode::InvalidParameter,
          "epsilon must lie in (0, 0.5)");
  const int n = static_cast<int>(data.n());
  const int j0 = static_cast<int>(std::floor(n * epsilon));
  require(j0 >= min_window_length(data.k()), ErrorCode::WindowTooShort,
          "floor(n*epsilon) below the minimum window length");
  QuantileFit full = fit_quantile(data, 0, n, alpha, nullptr, opt);
  return detail::estimate_grid(j0, n, [&](int j) {
    if (j == n) return full;
    return fit_quantile(data, 0, j, alpha, nullptr, opt, &full.coef);
  });
}

// alpha_hat(j/n, 1) for every j in [0, n - floor(n*eps)]; entry j fits [j, n).
inline QuantilePath backward_estimates(const Dataset& data, double alpha,
                                       double epsilon,
                                       const QrSolverOptions& opt = {}) {
  require(epsilon > 0.0 && epsilon < 0.5, ErrorCode::InvalidParameter,
          "epsilon must lie in (0, 0.5)");
  const int n = static_cast<int>(data.n());
  const int j0 = static_cast<int>(std::floor(n * epsilon));
  require(j0 >= min_window_length(data.k()), ErrorCode::WindowTooShort,
          "floor(n*epsilon) below the minimum window length");
  QuantileFit full = fit_quantile(data, 0, n, alpha, nullptr, opt);
  return detail::estimate_grid(0, n - j0, [&](int j) {
    if (j == 0) return full;
    return fit_quantile(data, j, n, alpha, nullptr, opt, &full.coef);
  });
}

// Fit for each window [t, t + window_len), t = 0..n-window_len.
inline std::vector<QuantileFit> rolling_estimates(const Dataset& data,
                                                  double alpha, int window_len,
                                                  const QrSolverOptions& opt = {}) {
  const int n = static_cast<int>(data.n());
  require(window_len >= min_window_length(data.k()), ErrorCode::WindowTooShort,
          "window length below minimum");
  require(window_len <= n, ErrorCode::WindowTooShort,
          "window length exceeds the sample");
  std::vector<QuantileFit> fits;
  fits.reserve(n - window_len + 1);
  const VectorXd* warm = nullptr;
  for (int t = 0; t + window_len <= n; ++t) {
    fits.push_back(fit_quantile(data, t, t + window_len, alpha, nullptr, opt, warm));
    warm = &fits.back().coef;
  }
  return fits;
}

}  // namespace snquant
