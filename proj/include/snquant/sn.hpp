#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "snquant/covar.hpp"
#include "snquant/quantile.hpp"
#include "snquant/tables.hpp"

namespace snquant {

inline constexpr double kMaxSkippedFraction = 0.10;
inline constexpr double kNormalizerMaxCondition = 1e12;

// Break-location grid J = {floor(n*eps), ..., floor(n*(1-eps))}, s = j/n.
struct GridSpec {
  int n = 0;
  double epsilon = 0.1;
  int j_lo = 0;
  int j_hi = 0;

  static GridSpec make(int n, double epsilon) {
    require(epsilon > 0.0 && epsilon < 0.5, ErrorCode::InvalidParameter,
            "epsilon must lie in (0, 0.5)");
    require(n >= 2, ErrorCode::InvalidParameter, "n too small");
    GridSpec g;
    g.n = n;
    g.epsilon = epsilon;
    g.j_lo = static_cast<int>(std::floor(n * epsilon));
    g.j_hi = static_cast<int>(std::floor(n * (1.0 - epsilon)));
    require(g.j_lo >= 1 && g.j_lo <= g.j_hi, ErrorCode::EmptyGrid,
            "trimming leaves no grid points");
    return g;
  }

  double s(int j) const { return static_cast<double>(j) / n; }
  int size() const { return j_hi - j_lo + 1; }
};

struct Decision {
  bool reject = false;
  double level = 0.0;
  double critical_value = 0.0;
};

struct BreakTestResult {
  double statistic = 0.0;
  double argmax_s = 0.0;
  std::vector<std::pair<double, double>> trajectory;  // (s, value), non-skipped
  int dim = 0;
  double epsilon = 0.0;
  std::vector<int> skipped;  // grid indices without a usable value
  std::optional<Decision> decision;
  std::optional<double> p_value;
};

// Self-normalized sup statistic over the grid:
//   sup_s s^2 (1-s)^2 [fwd(s)-bwd(s)]' N(s)^{-1} [fwd(s)-bwd(s)],
// with N(s) the Riemann-sum normalizer built from the recursive estimates.
// Works unchanged for stacked (alpha', beta')' paths. Grid points whose
// normalizer is singular or worse than kNormalizerMaxCondition are skipped;
// more than 10% skipped aborts.
inline BreakTestResult sn_break_statistic(const CoefPath& fwd,
                                          const CoefPath& bwd,
                                          const GridSpec& grid) {
  require(grid.size() > 0, ErrorCode::EmptyGrid, "empty break grid");
  require(fwd.j_begin <= grid.j_lo && fwd.j_end() >= grid.j_hi,
          ErrorCode::DimensionMismatch,
          "forward path does not cover the grid");
  require(bwd.j_begin <= grid.j_lo && bwd.j_end() >= grid.j_hi,
          ErrorCode::DimensionMismatch,
          "backward path does not cover the grid");

  int d = 0;
  for (int j = grid.j_lo; j <= grid.j_hi && d == 0; ++j)
    if (fwd.has(j)) d = static_cast<int>(fwd.at(j).size());
  require(d > 0, ErrorCode::TooManySkippedPoints, "no usable estimates on the grid");
  for (int j = grid.j_lo; j <= grid.j_hi; ++j) {
    if (fwd.has(j))
      require(fwd.at(j).size() == d, ErrorCode::DimensionMismatch,
              "inconsistent coefficient dimension in forward path");
    if (bwd.has(j))
      require(bwd.at(j).size() == d, ErrorCode::DimensionMismatch,
              "inconsistent coefficient dimension in backward path");
  }

  const int m = grid.size();
  const double n = grid.n;

  // prefix sums of (i/n)^2 {1, f_i, f_i f_i'} over valid forward entries,
  // suffix sums of (1-i/n)^2 {1, b_i, b_i b_i'} over valid backward entries
  std::vector<double> F0(m), B0(m);
  std::vector<VectorXd> F1(m), B1(m);
  std::vector<MatrixXd> F2(m), B2(m);
  {
    double c0 = 0.0;
    VectorXd c1 = VectorXd::Zero(d);
    MatrixXd c2 = MatrixXd::Zero(d, d);
    for (int j = grid.j_lo; j <= grid.j_hi; ++j) {
      if (fwd.has(j)) {
        const double w = grid.s(j) * grid.s(j);
        const VectorXd& f = fwd.at(j);
        c0 += w;
        c1 += w * f;
        c2 += w * f * f.transpose();
      }
      F0[j - grid.j_lo] = c0;
      F1[j - grid.j_lo] = c1;
      F2[j - grid.j_lo] = c2;
    }
    c0 = 0.0;
    c1.setZero();
    c2.setZero();
    for (int j = grid.j_hi; j >= grid.j_lo; --j) {
      if (bwd.has(j)) {
        const double w = (1.0 - grid.s(j)) * (1.0 - grid.s(j));
        const VectorXd& b = bwd.at(j);
        c0 += w;
        c1 += w * b;
        c2 += w * b * b.transpose();
      }
      B0[j - grid.j_lo] = c0;
      B1[j - grid.j_lo] = c1;
      B2[j - grid.j_lo] = c2;
    }
  }

  BreakTestResult result;
  result.dim = d;
  result.epsilon = grid.epsilon;
  result.trajectory.reserve(m);
  bool have_value = false;
  MatrixXd N(d, d);
  for (int j = grid.j_lo; j <= grid.j_hi; ++j) {
    if (!fwd.has(j) || !bwd.has(j)) {
      result.skipped.push_back(j);
      continue;
    }
    const int idx = j - grid.j_lo;
    const double s = grid.s(j);
    const VectorXd& f = fwd.at(j);
    const VectorXd& b = bwd.at(j);
    N = F2[idx] - F1[idx] * f.transpose() - f * F1[idx].transpose() +
        F0[idx] * f * f.transpose();
    N += B2[idx] - B1[idx] * b.transpose() - b * B1[idx].transpose() +
         B0[idx] * b * b.transpose();
    N /= n;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(N);
    const auto& lambda = eig.eigenvalues();
    if (lambda[0] <= 0.0 ||
        lambda[d - 1] >= kNormalizerMaxCondition * lambda[0]) {
      result.skipped.push_back(j);
      continue;
    }
    const VectorXd delta = f - b;
    const VectorXd proj = eig.eigenvectors().transpose() * delta;
    const double quad = (proj.array().square() / lambda.array()).sum();
    const double value = s * s * (1.0 - s) * (1.0 - s) * quad;
    result.trajectory.emplace_back(s, value);
    if (!have_value || value > result.statistic) {
      result.statistic = value;
      result.argmax_s = s;
      have_value = true;
    }
  }

  require(static_cast<double>(result.skipped.size()) <=
              kMaxSkippedFraction * m,
          ErrorCode::TooManySkippedPoints,
          std::to_string(result.skipped.size()) + " of " + std::to_string(m) +
              " grid points skipped");
  return result;
}

// Attach the reject/retain decision (and p-value when the table stores its
// raw sample) for a level-`level` test.
inline void apply_decision(BreakTestResult& result,
                           const CriticalValueTable& table, double level) {
  require(table.dim == result.dim, ErrorCode::DimensionMismatch,
          "table dimension " + std::to_string(table.dim) +
              " != statistic dimension " + std::to_string(result.dim));
  Decision dec;
  dec.level = level;
  dec.critical_value = table.quantile(1.0 - level);
  dec.reject = result.statistic > dec.critical_value;
  result.decision = dec;
  if (table.has_raw()) result.p_value = table.p_value(result.statistic);
}

struct SignificanceResult {
  double t_stat = 0.0;
  double coef = 0.0;        // full-sample estimate of the tested coefficient
  double normalizer = 0.0;  // S_{n,alpha_i}
  std::optional<double> p_value;
};

// Coefficient significance statistic
//   T_n = n alpha_hat_i(0,1)^2 / sum_{j=floor(n eps)}^{n} (j/n)^2
//         [alpha_hat_i(0,j/n) - alpha_hat_i(0,1)]^2
// against the scalar limit W^2(1) / int_eps^1 [W(s)-sW(1)]^2 ds.
inline SignificanceResult sn_significance(const CoefPath& fwd, int coef_index,
                                          const GridSpec& grid,
                                          const CriticalValueTable* scalar_table = nullptr) {
  const int n = grid.n;
  require(fwd.j_begin <= grid.j_lo && fwd.j_end() >= n,
          ErrorCode::DimensionMismatch,
          "forward path must cover [floor(n*eps), n]");
  require(fwd.has(n), ErrorCode::ZeroNormalizer,
          "full-sample estimate missing");
  require(coef_index >= 0 && coef_index < fwd.at(n).size(),
          ErrorCode::InvalidParameter, "coefficient index out of range");

  const double full = fwd.at(n)[coef_index];
  double S = 0.0;
  for (int j = grid.j_lo; j <= n; ++j) {
    if (!fwd.has(j)) continue;
    const double s = static_cast<double>(j) / n;
    const double diff = fwd.at(j)[coef_index] - full;
    S += s * s * diff * diff;
  }
  require(S >= 1e-14, ErrorCode::ZeroNormalizer,
          "self-normalizer below 1e-14 (constant estimates?)");

  SignificanceResult res;
  res.coef = full;
  res.normalizer = S;
  res.t_stat = n * full * full / S;
  if (scalar_table && scalar_table->has_raw())
    res.p_value = scalar_table->p_value(res.t_stat);
  return res;
}

struct TwoStageResult {
  BreakTestResult qr_stage;                   // U_{n,alpha} at level iota/2
  std::optional<BreakTestResult> covar_stage; // U_{n,beta} at level iota/2
  bool qr_rejected = false;
  bool covar_rejected = false;
  bool overall_reject = false;
  std::string message;
};

// Bonferroni two-stage test of CoVaR-regression stability: stage 1 tests the
// QR path at level iota/2; only if it retains is the CoVaR coefficient path
// tested, also at iota/2.
inline TwoStageResult two_stage_covar_test(const Dataset& data, double alpha,
                                           double beta, double epsilon,
                                           double iota,
                                           const CriticalValueTable& table_qr,
                                           const CriticalValueTable& table_beta,
                                           const QrSolverOptions& opt = {}) {
  require(data.z.has_value(), ErrorCode::MissingZ,
          "two-stage CoVaR test needs the second response z");
  const GridSpec grid = GridSpec::make(static_cast<int>(data.n()), epsilon);
  TwoStageResult out;

  QuantilePath qr_fwd = forward_estimates(data, alpha, epsilon, opt);
  QuantilePath qr_bwd = backward_estimates(data, alpha, epsilon, opt);
  out.qr_stage = sn_break_statistic(qr_fwd.coef_path(), qr_bwd.coef_path(), grid);
  apply_decision(out.qr_stage, table_qr, iota / 2.0);
  out.qr_rejected = out.qr_stage.decision->reject;
  if (out.qr_rejected) {
    out.overall_reject = true;
    out.message = "QR unstable, CoVaR stage not run";
    return out;
  }

  CoVaRPath cv_fwd = forward_covar_estimates(data, alpha, beta, epsilon, opt);
  CoVaRPath cv_bwd = backward_covar_estimates(data, alpha, beta, epsilon, opt);
  BreakTestResult stage2 =
      sn_break_statistic(cv_fwd.covar_path(), cv_bwd.covar_path(), grid);
  apply_decision(stage2, table_beta, iota / 2.0);
  out.covar_rejected = stage2.decision->reject;
  out.covar_stage = std::move(stage2);
  out.overall_reject = out.covar_rejected;
  out.message = out.covar_rejected ? "CoVaR coefficient path unstable"
                                   : "no instability detected";
  return out;
}

}  // namespace snquant
