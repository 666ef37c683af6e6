#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "snquant/dgp.hpp"
#include "snquant/experiments.hpp"
#include "snquant/sn.hpp"

using namespace snquant;
using Catch::Approx;

namespace {
DgpConfig null_config(int n, std::uint64_t seed) {
  DgpConfig cfg;
  cfg.n = n;
  cfg.k = 2;
  cfg.regime = PredictorRegime::I0;
  cfg.c = 0.5;
  cfg.rho_veps = scaled_cross_correlation(2);
  cfg.seed = seed;
  return cfg;
}
}  // namespace

TEST_CASE("grid spec") {
  auto g = GridSpec::make(1000, 0.1);
  CHECK(g.j_lo == 100);
  CHECK(g.j_hi == 900);
  CHECK(g.size() == 801);
  CHECK(g.s(100) == Approx(0.1));
  CHECK_THROWS_AS(GridSpec::make(1000, 0.0), Error);
  CHECK_THROWS_AS(GridSpec::make(1000, 0.5), Error);
}

TEST_CASE("constant estimate paths give a zero normalizer everywhere") {
  GridSpec g = GridSpec::make(100, 0.2);
  CoefPath fwd, bwd;
  fwd.j_begin = 0;
  bwd.j_begin = 0;
  for (int j = 0; j <= 100; ++j) {
    fwd.coefs.push_back(VectorXd::Constant(1, 1.5));
    bwd.coefs.push_back(VectorXd::Constant(1, 1.5));
  }
  CHECK_THROWS_MATCHES(sn_break_statistic(fwd, bwd, g), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::TooManySkippedPoints;
                       }));
}

TEST_CASE("dimension mismatches are rejected") {
  GridSpec g = GridSpec::make(100, 0.2);
  CoefPath fwd, bwd;
  fwd.j_begin = 0;
  bwd.j_begin = 0;
  Xoshiro256pp rng(3);
  for (int j = 0; j <= 100; ++j) {
    fwd.coefs.push_back(VectorXd::NullaryExpr(2, [&](Eigen::Index) {
      return rng.next_normal();
    }));
    bwd.coefs.push_back(VectorXd::NullaryExpr(j == 50 ? 3 : 2,
                                              [&](Eigen::Index) {
      return rng.next_normal();
    }));
  }
  CHECK_THROWS_MATCHES(sn_break_statistic(fwd, bwd, g), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::DimensionMismatch;
                       }));
}

TEST_CASE("statistic is nonnegative, argmax reported at the smallest s") {
  Dataset data = generate(null_config(400, 31));
  GridSpec g = GridSpec::make(400, 0.1);
  auto fwd = forward_estimates(data, 0.9, 0.1);
  auto bwd = backward_estimates(data, 0.9, 0.1);
  auto res = sn_break_statistic(fwd.coef_path(), bwd.coef_path(), g);
  CHECK(res.statistic >= 0.0);
  CHECK(res.dim == 3);
  CHECK(res.epsilon == Approx(0.1));
  CHECK(res.trajectory.size() + res.skipped.size() ==
        static_cast<std::size_t>(g.size()));
  double max_val = 0.0;
  double first_s = 0.0;
  for (const auto& [s, v] : res.trajectory) {
    if (v > max_val) {
      max_val = v;
      first_s = s;
    }
  }
  CHECK(res.statistic == Approx(max_val));
  CHECK(res.argmax_s == Approx(first_s));
}

TEST_CASE("affine invariance of the trajectory") {
  Dataset data = generate(null_config(400, 37));
  GridSpec g = GridSpec::make(400, 0.1);
  auto r1 = sn_break_statistic(forward_estimates(data, 0.9, 0.1).coef_path(),
                               backward_estimates(data, 0.9, 0.1).coef_path(), g);

  Dataset tr = data;
  VectorXd b = VectorXd::Ones(3);
  tr.y = 2.0 * data.y + data.X * b;
  auto r2 = sn_break_statistic(forward_estimates(tr, 0.9, 0.1).coef_path(),
                               backward_estimates(tr, 0.9, 0.1).coef_path(), g);

  REQUIRE(r1.trajectory.size() == r2.trajectory.size());
  for (std::size_t i = 0; i < r1.trajectory.size(); ++i) {
    CHECK(r1.trajectory[i].first == Approx(r2.trajectory[i].first));
    CHECK(r2.trajectory[i].second ==
          Approx(r1.trajectory[i].second).epsilon(1e-6).margin(1e-9));
  }
  CHECK(r2.statistic == Approx(r1.statistic).epsilon(1e-6));
}

TEST_CASE("stacked gamma with z == y reproduces the QR block") {
  // alpha = 0.7 keeps every window's exceedance count comfortably above the
  // second-stage minimum at this n
  Dataset data = generate(null_config(400, 41));
  data.z = data.y;
  GridSpec g = GridSpec::make(400, 0.1);
  auto fwd = forward_estimates(data, 0.7, 0.1);
  auto bwd = backward_estimates(data, 0.7, 0.1);
  CoefPath gf = stacked_path_from_qr(data, fwd, 0.7);
  CoefPath gb = stacked_path_from_qr(data, bwd, 0.7);
  auto res = sn_break_statistic(gf, gb, g);
  CHECK(res.dim == 6);
  CHECK(std::isfinite(res.statistic));
  // QR block of the stacked path equals the standalone path exactly
  for (int j = g.j_lo; j <= g.j_hi; j += 50) {
    if (!gf.has(j)) continue;
    CHECK((gf.at(j).head(3) - fwd.at(j).coef).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("decision attachment and p-values") {
  Dataset data = generate(null_config(400, 43));
  GridSpec g = GridSpec::make(400, 0.1);
  auto res = sn_break_statistic(forward_estimates(data, 0.9, 0.1).coef_path(),
                                backward_estimates(data, 0.9, 0.1).coef_path(),
                                g);
  CriticalValueTable table;
  table.dim = 3;
  table.quantiles = {{0.80, 10.0}, {0.95, 20.0}};
  table.raw_sample = {1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};
  apply_decision(res, table, 0.05);
  REQUIRE(res.decision.has_value());
  CHECK(res.decision->critical_value == 20.0);
  CHECK(res.decision->reject == (res.statistic > 20.0));
  REQUIRE(res.p_value.has_value());
  CHECK(*res.p_value >= 0.0);
  CHECK(*res.p_value <= 1.0);

  CriticalValueTable wrong = table;
  wrong.dim = 4;
  CHECK_THROWS_AS(apply_decision(res, wrong, 0.05), Error);
}

TEST_CASE("sn_significance basics") {
  const int n = 300;
  GridSpec g = GridSpec::make(n, 0.1);

  CoefPath constant;
  constant.j_begin = g.j_lo;
  for (int j = g.j_lo; j <= n; ++j)
    constant.coefs.push_back(VectorXd::Constant(2, 3.0));
  CHECK_THROWS_MATCHES(sn_significance(constant, 0, g), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::ZeroNormalizer;
                       }));

  Dataset data = generate(null_config(n, 47));
  auto fwd = forward_estimates(data, 0.9, 0.1);
  CoefPath path = fwd.coef_path();
  auto res = sn_significance(path, 0, g);
  CHECK(std::isfinite(res.t_stat));
  CHECK(res.t_stat >= 0.0);
  CHECK(res.normalizer > 0.0);

  // scale invariance: y -> c y scales numerator and normalizer alike
  Dataset sc = data;
  sc.y *= 5.0;
  auto res2 = sn_significance(forward_estimates(sc, 0.9, 0.1).coef_path(), 0, g);
  CHECK(res2.t_stat == Approx(res.t_stat).epsilon(1e-8));
}

TEST_CASE("two-stage test runs the documented stages") {
  Dataset data = generate(null_config(400, 53));
  CriticalValueTable lax;  // huge critical values: never rejects
  lax.dim = 3;
  lax.quantiles = {{0.95, 1e12}, {0.975, 1e12}};
  auto res = two_stage_covar_test(data, 0.7, 0.7, 0.1, 0.05, lax, lax);
  CHECK_FALSE(res.qr_rejected);
  REQUIRE(res.covar_stage.has_value());
  CHECK_FALSE(res.overall_reject);
  CHECK(res.message == "no instability detected");

  CriticalValueTable strict;  // zero critical values: always rejects
  strict.dim = 3;
  strict.quantiles = {{0.95, 0.0}, {0.975, 0.0}};
  auto rej = two_stage_covar_test(data, 0.7, 0.7, 0.1, 0.05, strict, strict);
  CHECK(rej.qr_rejected);
  CHECK_FALSE(rej.covar_stage.has_value());
  CHECK(rej.overall_reject);
  CHECK(rej.message == "QR unstable, CoVaR stage not run");
}
