#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "snquant/experiments.hpp"
#include "snquant/limit.hpp"

using namespace snquant;
using Catch::Approx;

namespace {
McOptions small_options(int reps, std::uint64_t seed) {
  McOptions opt;
  opt.k = 2;
  opt.reps = reps;
  opt.level = 0.05;
  opt.seed = seed;
  opt.threads = 2;
  return opt;
}
}  // namespace

TEST_CASE("size smoke run stays sane and deterministic across threads") {
  auto table_qr = simulate_limit_U(3, 0.1, 300, 2000, 404);
  auto table_gamma = simulate_limit_U(6, 0.1, 300, 2000, 405);
  std::vector<McCell> cells{{PredictorRegime::I0, 0.5, 200, 0.0, 0.5}};

  // alpha = 0.5 keeps second-stage samples viable at n = 200
  McOptions opt = small_options(60, 17);
  opt.alpha = 0.5;
  opt.beta = 0.5;
  auto rec = run_size_experiment(cells, opt, &table_qr, &table_gamma);
  REQUIRE(rec.size() == 2);
  CHECK(rec[0].test == "qr");
  CHECK(rec[1].test == "covar");
  for (const auto& r : rec) {
    CHECK(r.reps == 60);
    CHECK(r.failures <= 6);
    CHECK(r.rate >= 0.0);
    CHECK(r.rate <= 0.35);  // smoke band at n=200
    CHECK(r.se == Approx(std::sqrt(r.rate * (1 - r.rate) /
                                   (r.reps - r.failures))));
  }

  McOptions opt1 = opt;
  opt1.threads = 1;
  auto rec1 = run_size_experiment(cells, opt1, &table_qr, &table_gamma);
  for (std::size_t i = 0; i < rec.size(); ++i) {
    CHECK(rec[i].rejections == rec1[i].rejections);
    CHECK(rec[i].failures == rec1[i].failures);
  }
}

TEST_CASE("power at delta=0 reproduces the size cell under shared seeds") {
  auto table_qr = simulate_limit_U(3, 0.1, 300, 2000, 404);
  McOptions opt = small_options(40, 23);
  opt.run_covar = false;
  std::vector<McCell> size_cells{{PredictorRegime::I0, 0.5, 200, 0.0, 0.5}};
  std::vector<McCell> power_cells{{PredictorRegime::I0, 0.5, 200, 0.0, 0.5}};
  auto size_rec = run_size_experiment(size_cells, opt, &table_qr, nullptr);
  auto power_rec = run_power_experiment(power_cells, opt, &table_qr, nullptr);
  REQUIRE(size_rec.size() == 1);
  REQUIRE(power_rec.size() == 1);
  CHECK(size_rec[0].rejections == power_rec[0].rejections);
  CHECK(size_rec[0].failures == power_rec[0].failures);
}

TEST_CASE("a large break is detected far more often than the null rejects") {
  auto table_qr = simulate_limit_U(3, 0.1, 300, 2000, 404);
  McOptions opt = small_options(40, 29);
  opt.run_covar = false;
  std::vector<McCell> cells{{PredictorRegime::I0, 0.5, 300, 0.0, 0.5},
                            {PredictorRegime::I0, 0.5, 300, 1.5, 0.5}};
  auto rec = run_power_experiment(cells, opt, &table_qr, nullptr);
  REQUIRE(rec.size() == 2);
  CHECK(rec[1].rate > rec[0].rate + 0.3);
}

TEST_CASE("sweep config parsing") {
  std::istringstream cfg(R"(# sweep file
version = 1
mode = power
regime = ns
param = 0.5, 0.4
n = 500, 1000
delta = -0.1, 0, 0.1
s_star = 0.25
reps = 77
level = 0.10
alpha = 0.85
beta = 0.8
epsilon = 0.15
k = 1
seed = 99
rho_veps = -0.3
tests = qr
)");
  auto sweep = parse_mc_config(cfg);
  CHECK(sweep.mode == "power");
  CHECK(sweep.regime == PredictorRegime::NS);
  CHECK(sweep.params == std::vector<double>{0.5, 0.4});
  CHECK(sweep.ns == std::vector<int>{500, 1000});
  CHECK(sweep.deltas == std::vector<double>{-0.1, 0.0, 0.1});
  CHECK(sweep.s_star == 0.25);
  CHECK(sweep.options.reps == 77);
  CHECK(sweep.options.level == 0.10);
  CHECK(sweep.options.alpha == 0.85);
  CHECK(sweep.options.beta == 0.8);
  CHECK(sweep.options.epsilon == 0.15);
  CHECK(sweep.options.k == 1);
  CHECK(sweep.options.seed == 99);
  CHECK(sweep.options.rho_veps == Approx(-0.3));
  CHECK(sweep.options.run_qr);
  CHECK_FALSE(sweep.options.run_covar);

  auto cells = sweep_cells(sweep);
  CHECK(cells.size() == 2 * 2 * 3);

  std::istringstream noversion("mode = size\n");
  CHECK_THROWS_MATCHES(parse_mc_config(noversion), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::SchemaMismatch;
                       }));
  std::istringstream badkey("version = 1\nwhatever = 3\n");
  CHECK_THROWS_AS(parse_mc_config(badkey), Error);
}

TEST_CASE("csv emission shape") {
  std::vector<McRecord> recs(1);
  recs[0].regime = "i0";
  recs[0].param = 0.5;
  recs[0].n = 100;
  recs[0].test = "qr";
  recs[0].level = 0.05;
  recs[0].reps = 10;
  recs[0].rejections = 1;
  recs[0].rate = 0.1;
  recs[0].se = 0.09;
  const std::string csv = mc_records_to_csv(recs);
  CHECK(csv.find("regime,param,n,delta,s_star,test,level,reps,rejections,"
                 "rate,se,failures") == 0);
  CHECK(csv.find("i0,0.5,100,0,0,qr,") != std::string::npos);
  const auto line_start = csv.find("i0,");
  const auto line = csv.substr(line_start, csv.find('\n', line_start) - line_start);
  CHECK(std::count(line.begin(), line.end(), ',') == 11);  // 12 fields
}

TEST_CASE("missing tables are rejected up front") {
  McOptions opt = small_options(5, 1);
  std::vector<McCell> cells{{PredictorRegime::I0, 0.5, 200, 0.0, 0.5}};
  CHECK_THROWS_AS(run_mc_experiment(cells, opt, nullptr, nullptr), Error);
  auto wrong_dim = simulate_limit_U(2, 0.1, 300, 500, 1);
  opt.run_covar = false;
  CHECK_THROWS_MATCHES(run_mc_experiment(cells, opt, &wrong_dim, nullptr), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::DimensionMismatch;
                       }));
}
