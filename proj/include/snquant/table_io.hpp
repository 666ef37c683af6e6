#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "snquant/errors.hpp"
#include "snquant/limit.hpp"
#include "snquant/tables.hpp"

namespace snquant {

namespace detail {

// Shortest decimal string that parses back to exactly p.
inline std::string prob_key(double p) {
  char buf[32];
  for (int prec = 2; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*f", prec, p);
    if (std::stod(buf) == p) return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", p);
  return buf;
}

}  // namespace detail

// Writes content to a temporary sibling and renames it into place, so a
// failed run never leaves a partial file.
inline void atomic_write_file(const std::filesystem::path& path,
                              const std::string& content) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    require(out.good(), ErrorCode::IoError, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  require(!ec, ErrorCode::IoError,
          "rename to " + path.string() + " failed: " + ec.message());
}

// Raw samples: 8-byte little-endian count header, then 64-bit LE floats.
inline void write_raw_sample(const std::filesystem::path& path,
                             const std::vector<double>& sample) {
  std::string buf;
  buf.resize(8 + 8 * sample.size());
  const std::uint64_t count = sample.size();
  for (int b = 0; b < 8; ++b)
    buf[b] = static_cast<char>((count >> (8 * b)) & 0xff);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &sample[i], 8);
    for (int b = 0; b < 8; ++b)
      buf[8 + 8 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  atomic_write_file(path, buf);
}

inline std::vector<double> read_raw_sample(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open " + path.string());
  char header[8];
  in.read(header, 8);
  require(in.gcount() == 8, ErrorCode::IoError,
          "truncated raw sample header in " + path.string());
  std::uint64_t count = 0;
  for (int b = 0; b < 8; ++b)
    count |= static_cast<std::uint64_t>(static_cast<unsigned char>(header[b]))
             << (8 * b);
  std::vector<double> sample(count);
  std::vector<char> bytes(8 * count);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<std::uint64_t>(in.gcount()) == bytes.size(),
          ErrorCode::IoError, "truncated raw sample in " + path.string());
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(
                  static_cast<unsigned char>(bytes[8 * i + b]))
              << (8 * b);
    std::memcpy(&sample[i], &bits, 8);
  }
  return sample;
}

// Versioned JSON table document; the raw sample (when kept) goes to a
// sibling binary file referenced by raw_sample_path.
inline void store_table(const CriticalValueTable& table,
                        const std::filesystem::path& path,
                        bool write_raw = true) {
  nlohmann::json doc;
  doc["version"] = table.version;
  doc["statistic"] = table.statistic;
  doc["dim"] = table.dim;
  doc["epsilon"] = table.epsilon;
  doc["grid_points"] = table.grid_points;
  doc["replications"] = table.replications;
  doc["seed"] = table.seed;
  doc["generator"] = table.generator;
  nlohmann::json q = nlohmann::json::object();
  for (const auto& [prob, value] : table.quantiles)
    q[detail::prob_key(prob)] = value;
  doc["quantiles"] = q;
  if (write_raw && table.has_raw()) {
    std::filesystem::path raw = path;
    raw += ".raw";
    write_raw_sample(raw, table.raw_sample);
    doc["raw_sample_path"] = raw.filename().string();
  }
  atomic_write_file(path, doc.dump(2) + "\n");
}

inline CriticalValueTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, "cannot parse " + path.string() + ": " + e.what());
  }
  require(doc.is_object() && doc.contains("version"), ErrorCode::SchemaMismatch,
          "missing version field in " + path.string());
  require(doc["version"].is_number_integer() &&
              doc["version"].get<int>() == kTableVersion,
          ErrorCode::SchemaMismatch,
          "unsupported table version in " + path.string());
  CriticalValueTable table;
  try {
    table.statistic = doc.value("statistic", std::string("sup_break"));
    table.dim = doc.at("dim").get<int>();
    table.epsilon = doc.at("epsilon").get<double>();
    table.grid_points = doc.at("grid_points").get<int>();
    table.replications = doc.at("replications").get<std::int64_t>();
    table.seed = doc.at("seed").get<std::uint64_t>();
    table.generator = doc.value("generator", std::string());
    for (const auto& [key, value] : doc.at("quantiles").items())
      table.quantiles[std::stod(key)] = value.get<double>();
    if (doc.contains("raw_sample_path")) {
      std::filesystem::path raw =
          path.parent_path() / doc["raw_sample_path"].get<std::string>();
      table.raw_sample = read_raw_sample(raw);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaMismatch,
         "malformed table " + path.string() + ": " + e.what());
  }
  return table;
}

// Desk-scale simulation parameters used for on-the-fly tables.
inline constexpr int kDeskGridPoints = 1000;
inline constexpr std::int64_t kDeskReplications = 10000;
inline constexpr std::uint64_t kDefaultTableSeed = 20230915;

inline std::filesystem::path table_cache_dir() {
  if (const char* env = std::getenv("SNQUANT_CACHE_DIR")) return env;
  if (const char* home = std::getenv("HOME"))
    return std::filesystem::path(home) / ".cache" / "snquant";
  return ".snquant-cache";
}

inline std::filesystem::path table_cache_path(const std::string& statistic,
                                              int dim, double epsilon, int m,
                                              std::int64_t R) {
  char name[128];
  std::snprintf(name, sizeof(name), "%s_d%d_eps%s_m%d_R%lld.json",
                statistic == "significance" ? "sig" : "sup", dim,
                detail::prob_key(epsilon).c_str(), m,
                static_cast<long long>(R));
  return table_cache_dir() / name;
}

// Resolution order: explicit path, then the cache, then an on-the-fly
// desk-scale simulation (cached afterwards, best effort).
inline CriticalValueTable resolve_table(const std::string& statistic, int dim,
                                        double epsilon,
                                        const std::string& explicit_path,
                                        std::uint64_t seed, int threads,
                                        std::vector<std::string>* warnings) {
  if (!explicit_path.empty()) {
    CriticalValueTable t = load_table(explicit_path);
    require(t.statistic == statistic && t.dim == dim,
            ErrorCode::SchemaMismatch,
            "table at " + explicit_path + " is for statistic '" + t.statistic +
                "' dim " + std::to_string(t.dim) + ", need '" + statistic +
                "' dim " + std::to_string(dim));
    require(std::fabs(t.epsilon - epsilon) < 1e-12, ErrorCode::SchemaMismatch,
            "table at " + explicit_path + " has epsilon " +
                std::to_string(t.epsilon) + ", need " + std::to_string(epsilon));
    return t;
  }
  const auto cache =
      table_cache_path(statistic, dim, epsilon, kDeskGridPoints, kDeskReplications);
  std::error_code ec;
  if (std::filesystem::exists(cache, ec)) {
    try {
      CriticalValueTable t = load_table(cache);
      if (t.statistic == statistic && t.dim == dim &&
          std::fabs(t.epsilon - epsilon) < 1e-12)
        return t;
    } catch (const Error&) {
      // fall through to resimulation
    }
  }
  if (warnings)
    warnings->push_back(
        "no critical-value table supplied; simulated a desk-scale table (m=" +
        std::to_string(kDeskGridPoints) + ", R=" +
        std::to_string(kDeskReplications) + ", seed=" + std::to_string(seed) +
        ")");
  SimOptions opt;
  opt.threads = threads;
  CriticalValueTable t =
      statistic == "significance"
          ? simulate_limit_scalar(epsilon, kDeskGridPoints, kDeskReplications,
                                  seed, opt)
          : simulate_limit_U(dim, epsilon, kDeskGridPoints, kDeskReplications,
                             seed, opt);
  try {
    store_table(t, cache, true);
  } catch (const Error&) {
    // cache write is best effort
  }
  return t;
}

}  // namespace snquant
