#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "snquant/sn.hpp"
#include "snquant/tables.hpp"

namespace snquant {

// JSON document for a break-test run; the schema the CLI emits and the test
// suite round-trips.
inline nlohmann::json break_result_to_json(
    const BreakTestResult& result, const std::string& test, double alpha,
    std::optional<double> beta, const CriticalValueTable& table,
    const std::vector<std::string>& warnings) {
  nlohmann::json doc;
  doc["test"] = test;
  doc["alpha"] = alpha;
  if (beta) doc["beta"] = *beta;
  doc["epsilon"] = result.epsilon;
  doc["dim"] = result.dim;
  doc["statistic"] = result.statistic;
  doc["argmax_s"] = result.argmax_s;
  nlohmann::json cvs = nlohmann::json::object();
  for (const auto& [prob, value] : table.quantiles) {
    char key[32];
    std::snprintf(key, sizeof(key), "%.17g", prob);
    cvs[key] = value;
  }
  doc["critical_values"] = cvs;
  if (result.p_value) doc["p_value"] = *result.p_value;
  if (result.decision) {
    doc["reject"] = result.decision->reject;
    doc["level"] = result.decision->level;
    doc["critical_value"] = result.decision->critical_value;
  }
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& [s, value] : result.trajectory)
    traj.push_back({{"s", s}, {"value", value}});
  doc["trajectory"] = traj;
  doc["skipped"] = result.skipped;
  doc["warnings"] = warnings;
  return doc;
}

inline nlohmann::json two_stage_to_json(const TwoStageResult& result,
                                        double alpha, double beta, double iota,
                                        const CriticalValueTable& table_qr,
                                        const CriticalValueTable& table_beta,
                                        const std::vector<std::string>& warnings) {
  nlohmann::json doc;
  doc["test"] = "covar-two-stage";
  doc["alpha"] = alpha;
  doc["beta"] = beta;
  doc["level"] = iota;
  doc["stage_level"] = iota / 2.0;
  doc["qr_stage"] =
      break_result_to_json(result.qr_stage, "qr", alpha, std::nullopt, table_qr, {});
  if (result.covar_stage)
    doc["covar_stage"] = break_result_to_json(*result.covar_stage, "covar-beta",
                                              alpha, beta, table_beta, {});
  doc["qr_rejected"] = result.qr_rejected;
  doc["covar_rejected"] = result.covar_rejected;
  doc["reject"] = result.overall_reject;
  doc["message"] = result.message;
  doc["warnings"] = warnings;
  return doc;
}

}  // namespace snquant
