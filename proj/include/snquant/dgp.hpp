#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "snquant/errors.hpp"
#include "snquant/quantile.hpp"
#include "snquant/rng.hpp"

namespace snquant {

enum class PredictorRegime { I0, NS };

inline const char* regime_name(PredictorRegime r) {
  return r == PredictorRegime::I0 ? "i0" : "ns";
}

struct BreakSpec {
  double s_star = 0.5;  // break fraction in (0,1)
  double delta = 0.0;   // shift added to every coefficient after the break
};

// Parameterization of the Monte Carlo design: near-/stationary AR predictors
// driven by a VAR(1), responses built from a multiple-block equicorrelation
// Gaussian, and an optional single coefficient break.
struct DgpConfig {
  int n = 1000;
  int k = 2;
  double alpha = 0.9;
  double beta = 0.9;
  PredictorRegime regime = PredictorRegime::I0;
  double c = 0.5;      // I0: R = (1-c) I_k, c in (0,1)
  double kappa = 0.5;  // NS: r_n = 1 - n^-kappa, kappa in (0,1)
  VectorXd mu_x;       // defaults to zeros(k)
  double phi = -0.95;  // Phi = phi I_k for the predictor-innovation VAR(1)
  double rho_v = 0.0;
  double rho_eps = 0.0;
  double rho_veps = 0.0;
  std::optional<BreakSpec> break_spec;
  VectorXd alpha0;  // defaults to (0, 1, ..., 1)'
  VectorXd beta0;   // defaults to (0, 1, ..., 1)'
  std::uint64_t seed = 0;

  int burn_in = 100;

  double r_n() const {
    return regime == PredictorRegime::I0 ? 1.0 - c
                                         : 1.0 - std::pow(n, -kappa);
  }

  void validate() const {
    require(n >= 2, ErrorCode::InvalidParameter, "n too small");
    require(k >= 1, ErrorCode::InvalidParameter, "k must be >= 1");
    require(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0,
            ErrorCode::InvalidParameter, "alpha, beta must lie in (0,1)");
    if (regime == PredictorRegime::I0)
      require(c > 0.0 && c < 1.0, ErrorCode::InvalidParameter,
              "I0 requires c in (0,1)");
    else
      require(kappa > 0.0 && kappa < 1.0, ErrorCode::InvalidParameter,
              "NS requires kappa in (0,1)");
    require(std::fabs(rho_v) < 1.0 && std::fabs(rho_eps) < 1.0,
            ErrorCode::InvalidParameter, "block correlations must lie in (-1,1)");
    if (break_spec)
      require(break_spec->s_star > 0.0 && break_spec->s_star < 1.0,
              ErrorCode::InvalidParameter, "s_star must lie in (0,1)");
  }
};

// The largest cross-block correlation magnitude keeping the joint
// equicorrelation matrix positive definite is 1/sqrt(2k). The paper's
// headline -0.95 is mapped onto the feasible range so that the correlation
// between the two block sums equals -0.95.
inline double scaled_cross_correlation(int k, double target = -0.95) {
  return target / std::sqrt(2.0 * k);
}

// Joint correlation matrix of (v_t', eps_t')': equicorrelated v-block (2x2),
// equicorrelated eps-block (k x k), constant cross block.
inline MatrixXd assemble_psi(int k, double rho_v, double rho_eps,
                             double rho_veps) {
  MatrixXd psi = MatrixXd::Identity(2 + k, 2 + k);
  psi(0, 1) = psi(1, 0) = rho_v;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (i != j) psi(2 + i, 2 + j) = rho_eps;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < k; ++j)
      psi(i, 2 + j) = psi(2 + j, i) = rho_veps;
  return psi;
}

namespace detail {

// 16-point Gauss-Legendre nodes/weights on [-1, 1].
inline const double kGL16Nodes[16] = {
    -0.9894009349916499, -0.9445750230732326, -0.8656312023878318,
    -0.7554044083550030, -0.6178762444026438, -0.4580167776572274,
    -0.2816035507792589, -0.0950125098376374, 0.0950125098376374,
    0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
    0.7554044083550030,  0.8656312023878318,  0.9445750230732326,
    0.9894009349916499};
inline const double kGL16Weights[16] = {
    0.0271524594117541, 0.0622535239386479, 0.0951585116824928,
    0.1246289712555339, 0.1495959888165767, 0.1691565193950025,
    0.1826034150449236, 0.1894506104550685, 0.1894506104550685,
    0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479,
    0.0271524594117541};

// P{v2 <= q, v1 >= lo} for standard bivariate normal with correlation rho,
// composite Gauss-Legendre over the truncated v1 range.
inline double upper_tail_joint_cdf(double q, double lo, double rho) {
  const double hi = lo + 45.0;
  const double sigma = std::sqrt(1.0 - rho * rho);
  const int panels = 64;
  const double h = (hi - lo) / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double a = lo + p * h;
    double acc = 0.0;
    for (int g = 0; g < 16; ++g) {
      const double x = a + 0.5 * h * (kGL16Nodes[g] + 1.0);
      acc += kGL16Weights[g] * normal_cdf((q - rho * x) / sigma) * normal_pdf(x);
    }
    total += 0.5 * h * acc;
  }
  return total;
}

}  // namespace detail

struct CovarOffsets {
  double q_alpha = 0.0;   // alpha-quantile of the v1 marginal
  double covar_q = 0.0;   // beta-quantile of v2 given v1 >= q_alpha
};

// Solves P{v2 <= q | v1 >= q_alpha} = beta by bisection on the conditional
// CDF evaluated by quadrature; reduces to the normal quantile at rho_v = 0.
inline CovarOffsets covar_error_offset(double alpha, double beta,
                                       double rho_v) {
  require(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0,
          ErrorCode::InvalidParameter, "alpha, beta must lie in (0,1)");
  require(std::fabs(rho_v) < 1.0, ErrorCode::InvalidParameter,
          "|rho_v| must be < 1");
  CovarOffsets off;
  off.q_alpha = normal_icdf(alpha);
  const double tail = 1.0 - alpha;
  auto cond_cdf = [&](double q) {
    return detail::upper_tail_joint_cdf(q, off.q_alpha, rho_v) / tail;
  };
  double lo = -15.0, hi = 15.0;
  require(cond_cdf(lo) <= beta && cond_cdf(hi) >= beta,
          ErrorCode::RootNotBracketed,
          "conditional quantile not bracketed in [-15, 15]");
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (cond_cdf(mid) < beta)
      lo = mid;
    else
      hi = mid;
  }
  off.covar_q = 0.5 * (lo + hi);
  return off;
}

// Draws one dataset from the design. The coefficient paths alpha_{0,t} and
// beta_{0,t} are the base coefficients plus delta*1 after floor(n*s_star).
inline Dataset generate(const DgpConfig& config) {
  config.validate();
  const int n = config.n, k = config.k;
  VectorXd mu = config.mu_x.size() == k ? config.mu_x : VectorXd::Zero(k);
  VectorXd base_alpha = config.alpha0.size() == k + 1
                            ? config.alpha0
                            : (VectorXd(k + 1) << 0.0, VectorXd::Ones(k)).finished();
  VectorXd base_beta = config.beta0.size() == k + 1
                           ? config.beta0
                           : (VectorXd(k + 1) << 0.0, VectorXd::Ones(k)).finished();

  const MatrixXd psi = assemble_psi(k, config.rho_v, config.rho_eps,
                                    config.rho_veps);
  Eigen::LLT<MatrixXd> llt(psi);
  require(llt.info() == Eigen::Success, ErrorCode::NonPositiveDefinite,
          "equicorrelation matrix Psi is not positive definite");
  const MatrixXd chol = llt.matrixL();

  const CovarOffsets off =
      covar_error_offset(config.alpha, config.beta, config.rho_v);
  const double r_n = config.r_n();
  const int break_row =
      config.break_spec
          ? static_cast<int>(std::floor(n * config.break_spec->s_star))
          : n;
  const double delta = config.break_spec ? config.break_spec->delta : 0.0;

  Xoshiro256pp rng(config.seed);
  VectorXd g(2 + k), shock(2 + k);
  auto draw_block = [&]() {
    for (int i = 0; i < 2 + k; ++i) g[i] = rng.next_normal();
    shock.noalias() = chol * g;
  };

  // VAR(1) burn-in for the predictor innovations from u = 0
  VectorXd u = VectorXd::Zero(k);
  for (int step = 0; step < config.burn_in; ++step) {
    draw_block();
    u = config.phi * u + shock.tail(k);
  }

  Dataset data;
  data.y.resize(n);
  data.z = VectorXd(n);
  data.X.resize(n, k + 1);
  VectorXd xi = VectorXd::Zero(k);
  VectorXd x_prev = mu + xi;  // x_0 with xi_0 = 0
  for (int t = 0; t < n; ++t) {
    data.X(t, 0) = 1.0;
    data.X.row(t).tail(k) = x_prev.transpose();
    draw_block();
    const double v1 = shock[0], v2 = shock[1];
    u = config.phi * u + shock.tail(k);
    xi = r_n * xi + u;
    x_prev = mu + xi;

    const bool post_break = t >= break_row;
    double ya = data.X.row(t).head(k + 1).dot(base_alpha);
    double zb = data.X.row(t).head(k + 1).dot(base_beta);
    if (post_break && delta != 0.0) {
      const double shift = delta * data.X.row(t).head(k + 1).sum();
      ya += shift;
      zb += shift;
    }
    data.y[t] = ya + (v1 - off.q_alpha);
    (*data.z)[t] = zb + (v2 - off.covar_q);
  }
  data.validate();
  return data;
}

}  // namespace snquant
