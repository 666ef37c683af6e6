#include <catch2/catch_amalgamated.hpp>

#include "snquant/dgp.hpp"
#include "snquant/rng.hpp"

using namespace snquant;
using Catch::Approx;

TEST_CASE("Psi assembly: blocks and cross terms") {
  const auto psi = assemble_psi(3, 0.2, 0.1, -0.3);
  CHECK(psi.rows() == 5);
  for (int i = 0; i < 5; ++i) CHECK(psi(i, i) == 1.0);
  CHECK(psi(0, 1) == 0.2);
  CHECK(psi(1, 0) == 0.2);
  for (int i = 2; i < 5; ++i)
    for (int j = 2; j < 5; ++j)
      if (i != j) CHECK(psi(i, j) == 0.1);
  for (int i = 0; i < 2; ++i)
    for (int j = 2; j < 5; ++j) {
      CHECK(psi(i, j) == -0.3);
      CHECK(psi(j, i) == -0.3);
    }
  CHECK((psi - psi.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the paper's literal cross correlation is infeasible at k=2") {
  DgpConfig cfg;
  cfg.n = 200;
  cfg.k = 2;
  cfg.rho_veps = -0.95;
  cfg.seed = 1;
  CHECK_THROWS_MATCHES(generate(cfg), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::NonPositiveDefinite;
                       }));
  // the scaled value keeps the block-sum correlation at -0.95 and is PD
  cfg.rho_veps = scaled_cross_correlation(2);
  CHECK(cfg.rho_veps == Approx(-0.475));
  CHECK_NOTHROW(generate(cfg));
}

TEST_CASE("covar_error_offset reduces to normal quantiles at rho 0") {
  auto off = covar_error_offset(0.9, 0.9, 0.0);
  CHECK(off.q_alpha == Approx(1.2815515655446004).margin(1e-9));
  CHECK(off.covar_q == Approx(1.2815515655446004).margin(1e-9));
  auto off2 = covar_error_offset(0.95, 0.8, 0.0);
  CHECK(off2.q_alpha == Approx(1.6448536269514722).margin(1e-9));
  CHECK(off2.covar_q == Approx(0.8416212335729143).margin(1e-9));
}

TEST_CASE("covar_error_offset matches a rejection-sampling oracle") {
  const double rho = 0.5, alpha = 0.9, beta = 0.9;
  auto off = covar_error_offset(alpha, beta, rho);

  // brute-force conditional CDF at the computed quantile
  Xoshiro256pp rng(314159);
  const int N = 4000000;
  const double s = std::sqrt(1.0 - rho * rho);
  std::int64_t cond = 0, below = 0;
  for (int i = 0; i < N; ++i) {
    const double v1 = rng.next_normal();
    if (v1 < off.q_alpha) continue;
    ++cond;
    const double v2 = rho * v1 + s * rng.next_normal();
    if (v2 <= off.covar_q) ++below;
  }
  const double phat = static_cast<double>(below) / cond;
  const double band = 3.0 * std::sqrt(beta * (1.0 - beta) / cond);
  CHECK(phat == Approx(beta).margin(band));
}

TEST_CASE("RootNotBracketed is unreachable for valid inputs") {
  CHECK_THROWS_AS(covar_error_offset(0.9, 0.9, 1.0), Error);  // |rho| < 1
  CHECK_NOTHROW(covar_error_offset(0.999, 0.999, 0.99));
}

TEST_CASE("conditional quantile calibration of generated data") {
  for (auto regime : {PredictorRegime::I0, PredictorRegime::NS}) {
    DgpConfig cfg;
    cfg.n = 10000;
    cfg.k = 2;
    cfg.regime = regime;
    cfg.c = 0.5;
    cfg.kappa = 0.5;
    cfg.rho_veps = scaled_cross_correlation(2);
    cfg.seed = 97;
    Dataset d = generate(cfg);

    VectorXd alpha0(3), beta0(3);
    alpha0 << 0.0, 1.0, 1.0;
    beta0 << 0.0, 1.0, 1.0;
    int below = 0, exceed = 0, covar_below = 0;
    for (int t = 0; t < cfg.n; ++t) {
      const double qy = d.X.row(t).dot(alpha0);
      if (d.y[t] <= qy)
        ++below;
      else {
        ++exceed;
        if ((*d.z)[t] <= d.X.row(t).dot(beta0)) ++covar_below;
      }
    }
    const double frac_y = static_cast<double>(below) / cfg.n;
    CHECK(frac_y ==
          Approx(0.9).margin(3.0 * std::sqrt(0.9 * 0.1 / cfg.n)));
    const double frac_z = static_cast<double>(covar_below) / exceed;
    CHECK(frac_z ==
          Approx(0.9).margin(3.0 * std::sqrt(0.9 * 0.1 / exceed)));
  }
}

TEST_CASE("delta = 0 break spec generates identical data") {
  DgpConfig a;
  a.n = 500;
  a.k = 2;
  a.rho_veps = scaled_cross_correlation(2);
  a.seed = 5;
  DgpConfig b = a;
  b.break_spec = BreakSpec{0.5, 0.0};
  Dataset da = generate(a);
  Dataset db = generate(b);
  CHECK(da.y == db.y);
  CHECK(*da.z == *db.z);
  CHECK(da.X == db.X);
}

TEST_CASE("break shifts both coefficient paths after floor(n s*)") {
  DgpConfig base;
  base.n = 400;
  base.k = 1;
  base.rho_veps = scaled_cross_correlation(1);
  base.seed = 8;
  DgpConfig broke = base;
  broke.break_spec = BreakSpec{0.5, 0.7};
  Dataset d0 = generate(base);
  Dataset d1 = generate(broke);
  for (int t = 0; t < 400; ++t) {
    const double shift = 0.7 * d0.X.row(t).sum();
    if (t < 200) {
      CHECK(d1.y[t] == Approx(d0.y[t]).margin(1e-12));
      CHECK((*d1.z)[t] == Approx((*d0.z)[t]).margin(1e-12));
    } else {
      CHECK(d1.y[t] - d0.y[t] == Approx(shift).margin(1e-10));
      CHECK((*d1.z)[t] - (*d0.z)[t] == Approx(shift).margin(1e-10));
    }
  }
}

TEST_CASE("I0 and NS agree when c equals n^-kappa") {
  DgpConfig i0;
  i0.n = 800;
  i0.k = 2;
  i0.regime = PredictorRegime::I0;
  i0.c = std::pow(800.0, -0.5);
  i0.rho_veps = scaled_cross_correlation(2);
  i0.seed = 21;
  DgpConfig ns = i0;
  ns.regime = PredictorRegime::NS;
  ns.kappa = 0.5;
  Dataset a = generate(i0);
  Dataset b = generate(ns);
  CHECK(a.y == b.y);
  CHECK(a.X == b.X);
}

TEST_CASE("invalid configurations are rejected") {
  DgpConfig cfg;
  cfg.n = 100;
  cfg.k = 2;
  cfg.c = 1.5;
  CHECK_THROWS_AS(generate(cfg), Error);
  cfg.c = 0.5;
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(generate(cfg), Error);
  cfg.alpha = 0.9;
  cfg.regime = PredictorRegime::NS;
  cfg.kappa = 0.0;
  CHECK_THROWS_AS(generate(cfg), Error);
  cfg.kappa = 0.5;
  cfg.break_spec = BreakSpec{1.5, 0.1};
  CHECK_THROWS_AS(generate(cfg), Error);
}

TEST_CASE("same seed reproduces the dataset bitwise") {
  DgpConfig cfg;
  cfg.n = 300;
  cfg.k = 2;
  cfg.rho_veps = scaled_cross_correlation(2);
  cfg.seed = 1234;
  Dataset a = generate(cfg);
  Dataset b = generate(cfg);
  CHECK(a.y == b.y);
  CHECK(*a.z == *b.z);
  CHECK(a.X == b.X);
}
