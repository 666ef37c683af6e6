#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "snquant/dgp.hpp"
#include "snquant/limit.hpp"
#include "snquant/table_io.hpp"

using namespace snquant;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int exit_code = -1;
  std::string out;
  std::string err;
};

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() /
                 ("snquant_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliRun run_cli(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = "SNQUANT_CACHE_DIR='" + (work_dir() / "cache").string() +
                          "' '" SNQUANT_CLI_PATH "' " + args + " > '" +
                          out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  CliRun run;
  run.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  run.out = read_file(out);
  run.err = read_file(err);
  return run;
}

// CSV from the Monte Carlo design, written pre-lagged (X already aligned).
fs::path write_dgp_csv(const char* name, int n, double delta,
                       std::uint64_t seed) {
  DgpConfig cfg;
  cfg.n = n;
  cfg.k = 1;
  cfg.rho_veps = scaled_cross_correlation(1);
  if (delta != 0.0) cfg.break_spec = BreakSpec{0.5, delta};
  cfg.seed = seed;
  Dataset d = generate(cfg);
  fs::path p = work_dir() / name;
  std::ofstream out(p);
  out.precision(17);
  out << "date,y,z,x1\n";
  for (int t = 0; t < n; ++t)
    out << "d" << t << ',' << d.y[t] << ',' << (*d.z)[t] << ',' << d.X(t, 1)
        << '\n';
  return p;
}

fs::path write_table(const char* name, int dim, double cv) {
  CriticalValueTable t;
  t.statistic = "sup_break";
  t.dim = dim;
  t.epsilon = 0.1;
  t.grid_points = 1000;
  t.replications = 1000;
  t.seed = 1;
  for (double p : kDefaultQuantiles) t.quantiles[p] = cv * p;  // increasing
  fs::path path = work_dir() / name;
  store_table(t, path, false);
  return path;
}

}  // namespace

TEST_CASE("critvals determinism and validation") {
  const fs::path t1 = work_dir() / "cv1.json";
  const std::string cmd = "critvals --dim 2 --epsilon 0.1 --grid 300 "
                          "--reps 500 --seed 7 --out '" + t1.string() + "'";
  auto r1 = run_cli(cmd);
  REQUIRE(r1.exit_code == 0);
  const std::string first = read_file(t1);
  const std::string first_raw = read_file(fs::path(t1) += ".raw");
  auto r2 = run_cli(cmd);
  REQUIRE(r2.exit_code == 0);
  CHECK(read_file(t1) == first);
  CHECK(read_file(fs::path(t1) += ".raw") == first_raw);
  CHECK(r1.out == r2.out);

  // default quantile set
  auto doc = nlohmann::json::parse(read_file(t1));
  REQUIRE(doc.contains("quantiles"));
  for (const char* key : {"0.80", "0.90", "0.95", "0.975", "0.99", "0.995"})
    CHECK(doc["quantiles"].contains(key));
  CHECK(doc["version"] == 1);

  auto bad = run_cli("critvals --dim 2 --grid 300 --reps 0");
  CHECK(bad.exit_code == 1);
  auto err = nlohmann::json::parse(bad.err);
  CHECK(err["error"] == "InvalidParameter");
}

TEST_CASE("qr test end to end with JSON round trip") {
  const fs::path csv = write_dgp_csv("qr_null.csv", 300, 0.0, 11);
  const fs::path table = write_table("lax.json", 2, 1e9);
  const fs::path out = work_dir() / "qr_result.json";
  auto r = run_cli("test qr --input '" + csv.string() +
                   "' --y-col y --x-cols x1 --no-lag --alpha 0.9 "
                   "--level 0.05 --critvals '" + table.string() + "' --out '" +
                   out.string() + "' --fail-on-reject");
  REQUIRE(r.exit_code == 0);  // huge critical values: retain
  auto doc = nlohmann::json::parse(read_file(out));
  CHECK(doc["test"] == "qr");
  CHECK(doc["dim"] == 2);
  CHECK(doc["alpha"] == 0.9);
  CHECK(doc["reject"] == false);
  CHECK(doc["statistic"].is_number());
  CHECK(doc["argmax_s"].is_number());
  CHECK(doc["trajectory"].is_array());
  CHECK(doc["trajectory"].size() >= 200);
  CHECK(doc["skipped"].is_array());
  // round trip: parse(serialize(parse(x))) == parse(x)
  CHECK(nlohmann::json::parse(doc.dump()) == doc);

  // identical repeat run
  const fs::path out2 = work_dir() / "qr_result2.json";
  auto r2 = run_cli("test qr --input '" + csv.string() +
                    "' --y-col y --x-cols x1 --no-lag --alpha 0.9 "
                    "--level 0.05 --critvals '" + table.string() +
                    "' --out '" + out2.string() + "' --fail-on-reject");
  REQUIRE(r2.exit_code == 0);
  CHECK(read_file(out) == read_file(out2));
}

TEST_CASE("fail-on-reject exits 2 when the statistic exceeds the table") {
  const fs::path csv = write_dgp_csv("qr_break.csv", 300, 1.5, 13);
  const fs::path table = write_table("strict.json", 2, 1e-6);
  auto r = run_cli("test qr --input '" + csv.string() +
                   "' --y-col y --x-cols x1 --no-lag --critvals '" +
                   table.string() + "' --fail-on-reject");
  CHECK(r.exit_code == 2);
  auto doc = nlohmann::json::parse(r.out);
  CHECK(doc["reject"] == true);
  // without the flag the exit code stays 0
  auto r0 = run_cli("test qr --input '" + csv.string() +
                    "' --y-col y --x-cols x1 --no-lag --critvals '" +
                    table.string() + "'");
  CHECK(r0.exit_code == 0);
}

TEST_CASE("errors surface as machine-readable JSON on stderr") {
  auto r = run_cli("test qr --input /nonexistent.csv --y-col y --x-cols x");
  CHECK(r.exit_code == 1);
  auto err = nlohmann::json::parse(r.err);
  CHECK(err["error"] == "IoError");
  CHECK(err.contains("detail"));

  const fs::path csv = write_dgp_csv("cols.csv", 300, 0.0, 15);
  auto r2 = run_cli("test qr --input '" + csv.string() +
                    "' --y-col y --x-cols missing --no-lag");
  CHECK(r2.exit_code == 1);
  CHECK(nlohmann::json::parse(r2.err)["error"] == "MissingColumn");
}

TEST_CASE("exposure equals covar with swapped roles") {
  const fs::path csv = write_dgp_csv("expo.csv", 300, 0.0, 17);
  const fs::path table = write_table("lax4.json", 4, 1e9);
  const fs::path out1 = work_dir() / "covar_swapped.json";
  const fs::path out2 = work_dir() / "exposure.json";
  auto r1 = run_cli("test covar --input '" + csv.string() +
                    "' --y-col z --z-col y --x-cols x1 --no-lag --alpha 0.7 "
                    "--critvals '" + table.string() + "' --out '" +
                    out1.string() + "'");
  auto r2 = run_cli("test exposure --input '" + csv.string() +
                    "' --y-col y --z-col z --x-cols x1 --no-lag --alpha 0.7 "
                    "--critvals '" + table.string() + "' --out '" +
                    out2.string() + "'");
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  auto d1 = nlohmann::json::parse(read_file(out1));
  auto d2 = nlohmann::json::parse(read_file(out2));
  CHECK(d1["statistic"] == d2["statistic"]);
  CHECK(d1["trajectory"] == d2["trajectory"]);
  CHECK(d1["test"] == "covar");
  CHECK(d2["test"] == "exposure");
}

TEST_CASE("two-stage command reports stages") {
  const fs::path csv = write_dgp_csv("two.csv", 300, 0.0, 19);
  const fs::path table = write_table("lax2.json", 2, 1e9);
  const fs::path out = work_dir() / "two.json";
  auto r = run_cli("test covar-two-stage --input '" + csv.string() +
                   "' --y-col y --z-col z --x-cols x1 --no-lag --alpha 0.7 "
                   "--critvals-qr '" + table.string() + "' --critvals '" +
                   table.string() + "' --out '" + out.string() + "'");
  REQUIRE(r.exit_code == 0);
  auto doc = nlohmann::json::parse(read_file(out));
  CHECK(doc["test"] == "covar-two-stage");
  CHECK(doc["qr_rejected"] == false);
  CHECK(doc.contains("covar_stage"));
  CHECK(doc["message"] == "no instability detected");
}

TEST_CASE("rolling emits one row per window") {
  const fs::path csv = write_dgp_csv("roll.csv", 588, 0.0, 21);
  const fs::path out = work_dir() / "roll.csv.out";
  auto r = run_cli("rolling --input '" + csv.string() +
                   "' --y-col y --x-cols x1 --date-col date --no-lag "
                   "--window 240 --out '" + out.string() + "'");
  REQUIRE(r.exit_code == 0);
  const std::string body = read_file(out);
  const auto rows = std::count(body.begin(), body.end(), '\n');
  CHECK(rows == 350);  // header + 588-240+1 coefficient rows
  CHECK(body.rfind("end_index,end_date,coef_intercept,coef_x1", 0) == 0);
}

TEST_CASE("significance command produces per-coefficient rows") {
  const fs::path csv = write_dgp_csv("sig.csv", 400, 0.0, 23);
  // scalar table via the CLI
  const fs::path table = work_dir() / "scalar.json";
  auto rc = run_cli("critvals --scalar --epsilon 0.1 --grid 300 --reps 2000 "
                    "--seed 3 --out '" + table.string() + "'");
  REQUIRE(rc.exit_code == 0);
  const fs::path out = work_dir() / "sig.json";
  auto r = run_cli("significance --input '" + csv.string() +
                   "' --y-col y --x-cols x1 --no-lag --alpha 0.9 "
                   "--critvals '" + table.string() + "' --out '" +
                   out.string() + "'");
  REQUIRE(r.exit_code == 0);
  auto doc = nlohmann::json::parse(read_file(out));
  REQUIRE(doc["coefficients"].size() == 2);
  CHECK(doc["coefficients"][0]["name"] == "(intercept)");
  CHECK(doc["coefficients"][1]["name"] == "x1");
  for (const auto& c : doc["coefficients"]) {
    CHECK(c.contains("t_stat"));
    CHECK(c.contains("p_value"));
  }
}

TEST_CASE("mc smoke run: CSV shape and thread independence") {
  const fs::path tq = work_dir() / "mc_q.json";
  const fs::path tg = work_dir() / "mc_g.json";
  REQUIRE(run_cli("critvals --dim 3 --grid 300 --reps 500 --seed 5 --out '" +
                  tq.string() + "'").exit_code == 0);
  REQUIRE(run_cli("critvals --dim 6 --grid 300 --reps 500 --seed 6 --out '" +
                  tg.string() + "'").exit_code == 0);
  const std::string common =
      "mc --mode size --regime i0 --param-list 0.5 --n-list 150 --reps 6 "
      "--seed 31 --critvals-qr '" + tq.string() + "' --critvals-covar '" +
      tg.string() + "'";
  const fs::path o1 = work_dir() / "mc1.csv";
  const fs::path o2 = work_dir() / "mc2.csv";
  auto r1 = run_cli(common + " --threads 1 --out '" + o1.string() + "'");
  auto r2 = run_cli(common + " --threads 2 --out '" + o2.string() + "'");
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(read_file(o1) == read_file(o2));
  const std::string csv = read_file(o1);
  CHECK(csv.rfind("regime,param,n,delta,s_star,test,level,reps,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + qr + covar
}

TEST_CASE("mc accepts a sweep config file") {
  const fs::path cfg = work_dir() / "sweep.ini";
  {
    std::ofstream out(cfg);
    out << "version = 1\nmode = size\nregime = i0\nparam = 0.5\n"
        << "n = 150\nreps = 5\nk = 1\ntests = qr\nseed = 77\n";
  }
  const fs::path tq = work_dir() / "mc_q2.json";
  REQUIRE(run_cli("critvals --dim 2 --grid 300 --reps 500 --seed 5 --out '" +
                  tq.string() + "'").exit_code == 0);
  const fs::path out = work_dir() / "mc_cfg.csv";
  auto r = run_cli("mc --config '" + cfg.string() + "' --critvals-qr '" +
                   tq.string() + "' --out '" + out.string() + "'");
  REQUIRE(r.exit_code == 0);
  const std::string csv = read_file(out);
  CHECK(csv.find("i0,0.5,150,0,0.5,qr,") != std::string::npos);
}

TEST_CASE("on-the-fly desk-scale table with warning, then cached") {
  const fs::path csv = write_dgp_csv("cache.csv", 300, 0.0, 29);
  const fs::path out = work_dir() / "cache_run.json";
  auto r = run_cli("test qr --input '" + csv.string() +
                   "' --y-col y --x-cols x1 --no-lag --seed 9 --out '" +
                   out.string() + "'");
  REQUIRE(r.exit_code == 0);
  auto doc = nlohmann::json::parse(read_file(out));
  REQUIRE(doc["warnings"].size() >= 1);
  const std::string w = doc["warnings"][0];
  CHECK(w.find("desk-scale") != std::string::npos);
  CHECK(doc.contains("p_value"));  // raw sample kept for the cached table

  // second run hits the cache: no warning, same decision inputs
  const fs::path out2 = work_dir() / "cache_run2.json";
  auto r2 = run_cli("test qr --input '" + csv.string() +
                    "' --y-col y --x-cols x1 --no-lag --seed 9 --out '" +
                    out2.string() + "'");
  REQUIRE(r2.exit_code == 0);
  auto doc2 = nlohmann::json::parse(read_file(out2));
  CHECK(doc2["warnings"].empty());
  CHECK(doc2["critical_values"] == doc["critical_values"]);
}
