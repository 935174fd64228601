#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oadfl/common.hpp"
#include "oadfl/trainer.hpp"

namespace oadfl {

inline constexpr const char* kMetricsHeader =
    "round,global_grad_norm_sq,agreement_error,min_loss,avg_loss,nmse_db,"
    "delta_W,fro_err_expect,ones_err_expect";

inline void write_metrics_csv(const std::vector<RoundMetrics>& metrics,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << kMetricsHeader << "\n";
  char buf[360];
  for (const auto& m : metrics) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  m.round, m.global_grad_norm_sq, m.agreement_error, m.min_loss,
                  m.avg_loss, m.nmse_db, m.delta_w, m.fro_err_expect,
                  m.ones_err_expect);
    out << buf;
  }
}

inline std::vector<RoundMetrics> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw std::runtime_error(path + ": unexpected metrics CSV header");
  std::vector<RoundMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    RoundMetrics m;
    if (std::sscanf(line.c_str(), "%d,%lg,%lg,%lg,%lg,%lg,%lg,%lg,%lg",
                    &m.round, &m.global_grad_norm_sq, &m.agreement_error,
                    &m.min_loss, &m.avg_loss, &m.nmse_db, &m.delta_w,
                    &m.fro_err_expect, &m.ones_err_expect) != 9)
      throw std::runtime_error(path + ": malformed metrics row: " + line);
    out.push_back(m);
  }
  return out;
}

// Run manifest: the canonical merged configuration plus bookkeeping. The
// wall-clock field is informational and excluded from determinism contracts.
inline void write_manifest(const std::string& path,
                           const std::string& canonical_config,
                           const std::string& scheme, std::uint64_t seed,
                           double wall_clock_sec,
                           const std::map<std::string, double>& extra = {}) {
  nlohmann::json j;
  j["config"] = canonical_config;
  j["scheme"] = scheme;
  j["seed"] = seed;
  j["wall_clock_sec"] = wall_clock_sec;
  for (const auto& [k, v] : extra) j[k] = v;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace oadfl
