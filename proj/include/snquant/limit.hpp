#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <vector>

#include "snquant/errors.hpp"
#include "snquant/parallel.hpp"
#include "snquant/rng.hpp"
#include "snquant/sn.hpp"
#include "snquant/tables.hpp"

namespace snquant {

struct SimOptions {
  bool keep_raw = true;
  int threads = 0;  // 0 = hardware concurrency
  std::vector<double> probs{std::begin(kDefaultQuantiles),
                            std::end(kDefaultQuantiles)};
  // Test hook: orthogonal rotation applied to each Gaussian increment.
  // Leaves the law of the d-variate BM unchanged.
  const MatrixXd* rotate_increments = nullptr;
};

namespace detail {

// Empirical quantile, inverted-CDF convention: sorted[ceil(p*R)] (1-based).
inline double empirical_quantile(const std::vector<double>& sorted, double p) {
  const auto R = static_cast<std::int64_t>(sorted.size());
  std::int64_t idx = static_cast<std::int64_t>(std::ceil(p * R)) - 1;
  idx = std::clamp<std::int64_t>(idx, 0, R - 1);
  return sorted[idx];
}

// One draw of sup_{s in [eps,1-eps]} B(s)' Wmat(s)^{-1} B(s) with
// B(s) = W(s) - s W(1) and Wmat(s) the two bridge integrand blocks of the
// limit, discretized with the same inclusive Riemann sums as the statistic.
class SupFunctionalWorkspace {
 public:
  SupFunctionalWorkspace(int d, int m, double eps)
      : d_(d),
        m_(m),
        i_lo_(static_cast<int>(std::floor(m * eps))),
        i_hi_(std::min(static_cast<int>(std::floor(m * (1.0 - eps))), m - 1)),
        W_(m + 1, d),
        P1_(m + 1, d),
        Q1_(m + 1, d),
        P2_((m + 1) * d, d),
        Q2_((m + 1) * d, d),
        Pr2_(m + 1),
        Qr2_(m + 1) {
    require(i_lo_ >= 1 && i_lo_ <= i_hi_, ErrorCode::EmptyGrid,
            "trimming leaves no usable limit grid");
  }

  double draw(Xoshiro256pp& rng, const MatrixXd* rotation) {
    const double step = 1.0 / std::sqrt(static_cast<double>(m_));
    W_.row(0).setZero();
    VectorXd inc(d_);
    for (int i = 1; i <= m_; ++i) {
      for (int c = 0; c < d_; ++c) inc[c] = rng.next_normal();
      if (rotation) inc = (*rotation) * inc;
      W_.row(i) = W_.row(i - 1) + step * inc.transpose();
    }
    const VectorXd W1 = W_.row(m_).transpose();

    // forward prefix sums of {W W', (i/m) W, (i/m)^2}
    P1_.row(i_lo_ - 1).setZero();
    block(P2_, i_lo_ - 1).setZero();
    Pr2_[i_lo_ - 1] = 0.0;
    for (int i = i_lo_; i <= i_hi_; ++i) {
      const double r = static_cast<double>(i) / m_;
      P1_.row(i) = P1_.row(i - 1) + r * W_.row(i);
      block(P2_, i) = block(P2_, i - 1) +
                      W_.row(i).transpose() * W_.row(i);
      Pr2_[i] = Pr2_[i - 1] + r * r;
    }
    // backward suffix sums of {V V', (1-i/m) V, (1-i/m)^2}, V = W(1) - W
    Q1_.row(i_hi_ + 1).setZero();
    block(Q2_, i_hi_ + 1).setZero();
    Qr2_[i_hi_ + 1] = 0.0;
    for (int i = i_hi_; i >= i_lo_; --i) {
      const double omr = 1.0 - static_cast<double>(i) / m_;
      const Eigen::RowVectorXd V = W_.row(m_) - W_.row(i);
      Q1_.row(i) = Q1_.row(i + 1) + omr * V;
      block(Q2_, i) = block(Q2_, i + 1) + V.transpose() * V;
      Qr2_[i] = Qr2_[i + 1] + omr * omr;
    }

    double sup = 0.0;
    bool have = false;
    int skipped = 0;
    MatrixXd N(d_, d_);
    for (int j = i_lo_; j <= i_hi_; ++j) {
      const double s = static_cast<double>(j) / m_;
      const double oms = 1.0 - s;
      const VectorXd Wj = W_.row(j).transpose();
      const VectorXd Vj = W1 - Wj;
      N = block(P2_, j) -
          (P1_.row(j).transpose() * Wj.transpose() +
           Wj * P1_.row(j)) / s +
          (Pr2_[j] / (s * s)) * Wj * Wj.transpose();
      N += block(Q2_, j) -
           (Q1_.row(j).transpose() * Vj.transpose() + Vj * Q1_.row(j)) / oms +
           (Qr2_[j] / (oms * oms)) * Vj * Vj.transpose();
      N /= static_cast<double>(m_);
      llt_.compute(N);
      if (llt_.info() != Eigen::Success) {
        ++skipped;
        continue;
      }
      const auto& L = llt_.matrixLLT();
      double dmin = L(0, 0), dmax = L(0, 0);
      for (int c = 1; c < d_; ++c) {
        dmin = std::min(dmin, L(c, c));
        dmax = std::max(dmax, L(c, c));
      }
      // diagonal-of-L proxy for the condition number
      if (!(dmin > 0.0) || dmax * dmax >= kNormalizerMaxCondition * dmin * dmin) {
        ++skipped;
        continue;
      }
      const VectorXd bridge = Wj - s * W1;
      const double value = bridge.dot(llt_.solve(bridge));
      if (!have || value > sup) {
        sup = value;
        have = true;
      }
    }
    const int grid_size = i_hi_ - i_lo_ + 1;
    require(skipped <= kMaxSkippedFraction * grid_size,
            ErrorCode::SingularLimitNormalizer,
            "more than 10% of limit grid points had singular normalizers");
    require(have, ErrorCode::SingularLimitNormalizer, "no usable grid point");
    return sup;
  }

 private:
  Eigen::Block<MatrixXd> block(MatrixXd& store, int i) {
    return store.block(static_cast<Eigen::Index>(i) * d_, 0, d_, d_);
  }
  int d_, m_, i_lo_, i_hi_;
  MatrixXd W_, P1_, Q1_, P2_, Q2_;
  VectorXd Pr2_, Qr2_;
  Eigen::LLT<MatrixXd> llt_;
};

inline void validate_sim_params(int d, double eps, int m, std::int64_t R) {
  require(d >= 1, ErrorCode::InvalidParameter, "dim must be >= 1");
  require(m >= 100, ErrorCode::InvalidParameter, "grid size must be >= 100");
  require(R >= 100, ErrorCode::InvalidParameter, "replications must be >= 100");
  require(eps > 0.0 && eps < 0.5, ErrorCode::InvalidParameter,
          "epsilon must lie in (0, 0.5)");
}

inline CriticalValueTable finish_table(std::vector<double> values,
                                       const std::string& statistic, int d,
                                       double eps, int m, std::int64_t R,
                                       std::uint64_t seed,
                                       const SimOptions& opt) {
  std::sort(values.begin(), values.end());
  CriticalValueTable table;
  table.statistic = statistic;
  table.dim = d;
  table.epsilon = eps;
  table.grid_points = m;
  table.replications = R;
  table.seed = seed;
  for (double p : opt.probs) table.quantiles[p] = empirical_quantile(values, p);
  if (opt.keep_raw) table.raw_sample = std::move(values);
  return table;
}

}  // namespace detail

// Monte Carlo table of the sup-statistic limit W_d. Replication r uses the
// substream seed ^ r, so output depends only on (parameters, seed), not on
// the worker count.
inline CriticalValueTable simulate_limit_U(int d, double eps, int m,
                                           std::int64_t R, std::uint64_t seed,
                                           const SimOptions& opt = {}) {
  detail::validate_sim_params(d, eps, m, R);
  std::vector<double> values(R);
  const int threads = resolve_threads(opt.threads);
  const std::int64_t chunk = std::max<std::int64_t>(1, R / (threads * 16) + 1);
  const std::int64_t n_chunks = (R + chunk - 1) / chunk;
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    detail::SupFunctionalWorkspace ws(d, m, eps);
    const std::int64_t lo = static_cast<std::int64_t>(c) * chunk;
    const std::int64_t hi = std::min<std::int64_t>(lo + chunk, R);
    for (std::int64_t r = lo; r < hi; ++r) {
      auto rng = Xoshiro256pp::substream(seed, static_cast<std::uint64_t>(r));
      values[r] = ws.draw(rng, opt.rotate_increments);
    }
  });
  return detail::finish_table(std::move(values), "sup_break", d, eps, m, R,
                              seed, opt);
}

// Monte Carlo table of the scalar significance limit
//   W^2(1) / [(1/m) sum_{i in [eps,1]} (W(i/m) - (i/m) W(1))^2].
// Near-zero denominators are redrawn within the replication's substream;
// more than 0.1% redraws aborts.
inline CriticalValueTable simulate_limit_scalar(double eps, int m,
                                                std::int64_t R,
                                                std::uint64_t seed,
                                                const SimOptions& opt = {},
                                                std::int64_t* redraws_out = nullptr) {
  detail::validate_sim_params(1, eps, m, R);
  std::vector<double> values(R);
  std::atomic<std::int64_t> redraws{0};
  const int i_lo = static_cast<int>(std::floor(m * eps));
  const int threads = resolve_threads(opt.threads);
  const std::int64_t chunk = std::max<std::int64_t>(1, R / (threads * 16) + 1);
  const std::int64_t n_chunks = (R + chunk - 1) / chunk;
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    VectorXd W(m + 1);
    const double step = 1.0 / std::sqrt(static_cast<double>(m));
    const std::int64_t lo = static_cast<std::int64_t>(c) * chunk;
    const std::int64_t hi = std::min<std::int64_t>(lo + chunk, R);
    std::int64_t local_redraws = 0;
    for (std::int64_t r = lo; r < hi; ++r) {
      auto rng = Xoshiro256pp::substream(seed, static_cast<std::uint64_t>(r));
      for (;;) {
        W[0] = 0.0;
        for (int i = 1; i <= m; ++i) W[i] = W[i - 1] + step * rng.next_normal();
        double denom = 0.0;
        for (int i = i_lo; i <= m; ++i) {
          const double b = W[i] - (static_cast<double>(i) / m) * W[m];
          denom += b * b;
        }
        denom /= static_cast<double>(m);
        if (denom >= 1e-14) {
          values[r] = W[m] * W[m] / denom;
          break;
        }
        ++local_redraws;
      }
    }
    redraws += local_redraws;
  });
  if (redraws_out) *redraws_out = redraws.load();
  require(static_cast<double>(redraws.load()) <= 0.001 * R,
          ErrorCode::ZeroDenominator,
          "more than 0.1% of replications redrawn");
  auto table = detail::finish_table(std::move(values), "significance", 1, eps,
                                    m, R, seed, opt);
  return table;
}

}  // namespace snquant
