#include "rwmlab/results.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "rwmlab/errors.hpp"
#include "rwmlab/rng.hpp"

namespace rwmlab {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void ResultTable::save_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw ConfigError("results: cannot write " + path);
  os << "experiment,env,variant,seed,grid,forecast_step,metric,value,config_hash\n";
  for (const auto& r : rows) {
    os << r.experiment << ',' << r.env << ',' << r.variant << ',' << r.seed << ',' << r.grid
       << ',' << r.forecast_step << ',' << r.metric << ',' << format_double(r.value) << ','
       << r.config_hash << '\n';
  }
}

ResultTable ResultTable::load_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("results: cannot read " + path);
  ResultTable t;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    ResultRow r;
    std::string field;
    std::getline(ss, r.experiment, ',');
    std::getline(ss, r.env, ',');
    std::getline(ss, r.variant, ',');
    std::getline(ss, field, ',');
    r.seed = std::stoull(field);
    std::getline(ss, r.grid, ',');
    std::getline(ss, field, ',');
    r.forecast_step = std::stoi(field);
    std::getline(ss, r.metric, ',');
    std::getline(ss, field, ',');
    r.value = std::stod(field);
    std::getline(ss, r.config_hash, ',');
    t.rows.push_back(std::move(r));
  }
  return t;
}

std::vector<double> ResultTable::values(const std::string& metric, const std::string& variant,
                                        const std::string& grid, int forecast_step) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.metric != metric) continue;
    if (!variant.empty() && r.variant != variant) continue;
    if (!grid.empty() && r.grid != grid) continue;
    if (forecast_step != -2 && r.forecast_step != forecast_step) continue;
    out.push_back(r.value);
  }
  return out;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double ResultTable::median(const std::string& metric, const std::string& variant,
                           const std::string& grid, int forecast_step) const {
  return median_of(values(metric, variant, grid, forecast_step));
}

std::string fnv1a_hex(const std::string& bytes) {
  const std::uint64_t h = Rng::fnv1a(bytes);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("hash_file: cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  return fnv1a_hex(bytes);
}

}  // namespace rwmlab
