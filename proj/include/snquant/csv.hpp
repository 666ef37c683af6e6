#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "snquant/errors.hpp"
#include "snquant/quantile.hpp"
#include "snquant/strings.hpp"

namespace snquant {

// Column selection for CSV ingestion. When lag_predictors is set the tool
// pairs y[t] with the predictor row t-1 and drops the first row; otherwise
// the file is taken as pre-lagged.
struct CsvSchema {
  std::string y_col;
  std::optional<std::string> z_col;
  std::vector<std::string> x_cols;
  std::optional<std::string> date_col;  // passed through, never parsed
  bool lag_predictors = true;

  void validate() const {
    require(!y_col.empty(), ErrorCode::InvalidParameter, "y column not named");
    require(!x_cols.empty(), ErrorCode::InvalidParameter,
            "no predictor columns named");
    std::vector<std::string> all{y_col};
    if (z_col) all.push_back(*z_col);
    for (const auto& c : x_cols) all.push_back(c);
    if (date_col) all.push_back(*date_col);
    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t j = i + 1; j < all.size(); ++j)
        require(all[i] != all[j], ErrorCode::InvalidParameter,
                "column '" + all[i] + "' selected twice");
  }
};

struct IngestResult {
  Dataset data;
  std::vector<std::string> dates;  // aligned with data rows; empty if unused
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  cells.push_back(cell);
  return cells;
}

inline double parse_cell(const std::string& cell, std::size_t row,
                         const std::string& col) {
  const char* b = cell.data();
  const char* e = b + cell.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(b, e, value);
  require(ec == std::errc() && ptr == e && b < e && std::isfinite(value),
          ErrorCode::NonNumericCell,
          "row " + std::to_string(row) + ", column '" + col +
              "': cannot parse '" + cell + "' as a number");
  return value;
}

}  // namespace detail

inline IngestResult ingest_stream(std::istream& in, const CsvSchema& schema,
                                  Eigen::Index min_rows = 2) {
  schema.validate();
  std::string header_line;
  require(static_cast<bool>(std::getline(in, header_line)), ErrorCode::IoError,
          "empty file (no header row)");
  const auto header = detail::split_csv_line(header_line);
  auto column_index = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    fail(ErrorCode::MissingColumn, "column '" + name + "' not in header");
  };
  const int yi = column_index(schema.y_col);
  const int zi = schema.z_col ? column_index(*schema.z_col) : -1;
  const int di = schema.date_col ? column_index(*schema.date_col) : -1;
  std::vector<int> xi;
  for (const auto& c : schema.x_cols) xi.push_back(column_index(c));

  std::vector<double> ys, zs;
  std::vector<std::vector<double>> xs;
  std::vector<std::string> dates;
  std::string line;
  std::size_t rownum = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++rownum;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    auto cell_at = [&](int idx, const std::string& col) -> const std::string& {
      require(idx < static_cast<int>(cells.size()), ErrorCode::NonNumericCell,
              "row " + std::to_string(rownum) + ", column '" + col +
                  "': cell missing");
      return cells[idx];
    };
    ys.push_back(detail::parse_cell(cell_at(yi, schema.y_col), rownum, schema.y_col));
    if (zi >= 0)
      zs.push_back(detail::parse_cell(cell_at(zi, *schema.z_col), rownum, *schema.z_col));
    std::vector<double> xrow(xi.size());
    for (std::size_t c = 0; c < xi.size(); ++c)
      xrow[c] = detail::parse_cell(cell_at(xi[c], schema.x_cols[c]), rownum,
                                   schema.x_cols[c]);
    xs.push_back(std::move(xrow));
    if (di >= 0)
      dates.push_back(di < static_cast<int>(cells.size()) ? cells[di] : "");
  }

  const auto raw_n = static_cast<Eigen::Index>(ys.size());
  const int shift = schema.lag_predictors ? 1 : 0;
  const Eigen::Index n = raw_n - shift;
  require(n >= min_rows, ErrorCode::TooFewRows,
          "only " + std::to_string(n) + " usable rows after " +
              (shift ? "lagging" : "ingestion") + ", need at least " +
              std::to_string(min_rows));

  IngestResult out;
  out.data.y.resize(n);
  if (zi >= 0) out.data.z = VectorXd(n);
  out.data.X.resize(n, static_cast<Eigen::Index>(xi.size()) + 1);
  for (Eigen::Index t = 0; t < n; ++t) {
    out.data.y[t] = ys[t + shift];
    if (zi >= 0) (*out.data.z)[t] = zs[t + shift];
    out.data.X(t, 0) = 1.0;
    for (std::size_t c = 0; c < xi.size(); ++c)
      out.data.X(t, static_cast<Eigen::Index>(c) + 1) = xs[t][c];
    if (di >= 0) {
      if (out.dates.empty()) out.dates.resize(n);
      out.dates[t] = dates[t + shift];
    }
  }
  out.data.validate();
  return out;
}

inline IngestResult ingest(const std::string& path, const CsvSchema& schema,
                           Eigen::Index min_rows = 2) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open " + path);
  return ingest_stream(in, schema, min_rows);
}

}  // namespace snquant
