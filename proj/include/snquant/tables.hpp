#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "snquant/errors.hpp"

namespace snquant {

inline constexpr int kTableVersion = 1;
inline const double kDefaultQuantiles[] = {0.80, 0.90, 0.95, 0.975, 0.99, 0.995};

// Simulated quantiles of a limit law, keyed by dimension and trimming.
// statistic is "sup_break" (the U limit, W_d) or "significance" (the scalar
// T_n limit).
struct CriticalValueTable {
  int version = kTableVersion;
  std::string statistic = "sup_break";
  int dim = 1;
  double epsilon = 0.1;
  int grid_points = 0;
  std::int64_t replications = 0;
  std::uint64_t seed = 0;
  std::string generator = "xoshiro256++/inverse-cdf";
  std::map<double, double> quantiles;  // probability -> quantile value
  std::vector<double> raw_sample;      // sorted draws, optional

  bool has_raw() const { return !raw_sample.empty(); }

  double quantile(double p) const {
    for (const auto& [prob, value] : quantiles)
      if (std::fabs(prob - p) < 1e-9) return value;
    fail(ErrorCode::InvalidParameter,
         "quantile " + std::to_string(p) + " not present in table");
  }

  // Exceedance fraction of the stored sample; requires raw_sample.
  double p_value(double stat) const {
    require(has_raw(), ErrorCode::InvalidParameter,
            "table carries no raw sample for p-value lookups");
    auto it = std::lower_bound(raw_sample.begin(), raw_sample.end(), stat);
    return static_cast<double>(raw_sample.end() - it) /
           static_cast<double>(raw_sample.size());
  }
};

}  // namespace snquant
