#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "oadfl/common.hpp"

namespace oadfl {

// Per-device multicast transmit vectors u_i and receive combiners f_i.
// Power contract: 2*||u_i||^2 <= p0 for every device.
struct BeamformerSet {
  std::vector<CVec> transmit;  // length n_tx each
  std::vector<CVec> receive;   // length n_rx each

  int num_devices() const { return static_cast<int>(transmit.size()); }
};

inline bool power_feasible(const BeamformerSet& b, double p0,
                           double tol = 1e-9) {
  for (const auto& u : b.transmit)
    if (2.0 * u.squaredNorm() > p0 + tol) return false;
  return true;
}

// Full-power uniform transmit vectors and unit-average combiners; a safe
// deterministic starting point for the alternating optimization.
inline BeamformerSet uniform_init(int num_devices, int n_tx, int n_rx,
                                  double p0) {
  BeamformerSet b;
  b.transmit.assign(num_devices,
                    CVec::Constant(n_tx, Complex(std::sqrt(p0 / 2.0 / n_tx), 0.0)));
  b.receive.assign(num_devices, CVec::Constant(n_rx, Complex(1.0 / n_rx, 0.0)));
  return b;
}

inline void save_beamformers(const BeamformerSet& b, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "device,kind,index,re,im\n";
  char buf[64];
  auto emit = [&](int d, const char* kind, const CVec& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%d,%s,%d,%.17g,%.17g\n", d, kind,
                    static_cast<int>(k), v[k].real(), v[k].imag());
      out << buf;
    }
  };
  for (int d = 0; d < b.num_devices(); ++d) {
    emit(d, "tx", b.transmit[static_cast<std::size_t>(d)]);
    emit(d, "rx", b.receive[static_cast<std::size_t>(d)]);
  }
}

inline BeamformerSet load_beamformers(const std::string& path, int num_devices,
                                      int n_tx, int n_rx) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  BeamformerSet b;
  b.transmit.assign(num_devices, CVec::Zero(n_tx));
  b.receive.assign(num_devices, CVec::Zero(n_rx));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int d, k;
    char kind[8];
    double re, im;
    if (std::sscanf(line.c_str(), "%d,%2[^,],%d,%lf,%lf", &d, kind, &k, &re,
                    &im) != 5)
      throw std::runtime_error(path + ": bad beamformer row: " + line);
    CVec& v = (kind[0] == 't') ? b.transmit[static_cast<std::size_t>(d)]
                               : b.receive[static_cast<std::size_t>(d)];
    v[k] = Complex(re, im);
  }
  return b;
}

}  // namespace oadfl
