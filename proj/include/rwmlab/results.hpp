#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rwmlab {

// Long-format experiment record. Wall-clock measurements are kept out of the
// summary table so that re-running a config reproduces summary.csv
// byte-identically; timings land in a sidecar timing.csv instead.
struct ResultRow {
  std::string experiment;
  std::string env;
  std::string variant;
  std::uint64_t seed = 0;
  std::string grid;        // e.g. "noise=0.05" or "M=32,N=8"; empty if unused
  int forecast_step = -1;  // -1 when the metric is not per-step
  std::string metric;
  double value = 0.0;
  std::string config_hash;
};

struct ResultTable {
  std::vector<ResultRow> rows;

  void add(ResultRow row) { rows.push_back(std::move(row)); }
  void append(const ResultTable& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  }
  void save_csv(const std::string& path) const;
  static ResultTable load_csv(const std::string& path);

  // Median of matching rows; NaN when none match.
  double median(const std::string& metric, const std::string& variant = "",
                const std::string& grid = "", int forecast_step = -2) const;
  std::vector<double> values(const std::string& metric, const std::string& variant = "",
                             const std::string& grid = "", int forecast_step = -2) const;
};

double median_of(std::vector<double> v);

// FNV-1a hash of a byte string, hex-encoded; used for config provenance and
// the shared-corpus fairness assertion.
std::string fnv1a_hex(const std::string& bytes);
std::string hash_file(const std::string& path);

std::string format_double(double v);  // deterministic shortest-ish formatting

}  // namespace rwmlab
