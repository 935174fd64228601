#pragma once

// Test-only Monte Carlo oracle for the closed-form communication-error
// expectations. Straight-line implementation of the per-symbol receive chain
// under the stated correlation model: packed symbols are CN(0,2) i.i.d.
// across devices and channel uses, the combined noise at receiver i is
// CN(0, sigma^2 ||f_i||^2) per use. Independent of the library's expectation
// code paths on purpose: gains and misalignments are recomputed with explicit
// loops.

#include <cmath>
#include <cstdint>
#include <vector>

#include "oadfl/beamformers.hpp"
#include "oadfl/channel.hpp"
#include "oadfl/mixing.hpp"
#include "oadfl/rng.hpp"

namespace oadfl_test {

struct McEstimate {
  double fro_mean = 0.0, fro_se = 0.0;
  double ones_mean = 0.0, ones_se = 0.0;
};

inline McEstimate mc_error_estimate(const oadfl::Mat& w,
                                    const oadfl::BeamformerSet& beams,
                                    const oadfl::ChannelSet& cs,
                                    const oadfl::Vec& scales, int block_len,
                                    long draws, std::uint64_t seed) {
  using namespace oadfl;
  const int m = cs.num_devices;

  // Effective misalignment coefficients a[i][j] = w_ij * v_j - f_i^H H u_j
  // and combined noise deviations, via explicit loops.
  CMat coeff = CMat::Zero(m, m);
  Vec noise_std(m);
  for (int i = 0; i < m; ++i) {
    for (int j : cs.neighbors[i]) {
      Complex gain(0.0, 0.0);
      const CMat& h = cs.h(i, j);
      for (int a = 0; a < cs.n_rx; ++a) {
        Complex row(0.0, 0.0);
        for (int b = 0; b < cs.n_tx; ++b)
          row += h(a, b) * beams.transmit[static_cast<std::size_t>(j)][b];
        gain += std::conj(beams.receive[static_cast<std::size_t>(i)][a]) * row;
      }
      coeff(i, j) = w(i, j) * scales[j] - gain;
    }
    noise_std[i] = std::sqrt(
        cs.noise_variance *
        beams.receive[static_cast<std::size_t>(i)].squaredNorm() / 2.0);
  }

  auto rng = make_rng(seed, "mc-error-oracle");
  Gaussian gauss;
  const int chunk = 256;
  CMat symbols(block_len * chunk, m);
  CMat err(block_len * chunk, m);

  double fro_sum = 0.0, fro_sq = 0.0, ones_sum = 0.0, ones_sq = 0.0;
  long done = 0;
  while (done < draws) {
    const long todo = std::min<long>(chunk, draws - done);
    const Eigen::Index rows = static_cast<Eigen::Index>(todo) * block_len;
    for (Eigen::Index c = 0; c < rows; ++c)
      for (int j = 0; j < m; ++j)
        symbols(c, j) = Complex(gauss(rng), gauss(rng));  // CN(0,2)
    err.topRows(rows).noalias() = symbols.topRows(rows) * coeff.transpose();
    for (Eigen::Index c = 0; c < rows; ++c)
      for (int i = 0; i < m; ++i)
        err(c, i) -= noise_std[i] * Complex(gauss(rng), gauss(rng));
    for (long k = 0; k < todo; ++k) {
      const auto rounds = err.middleRows(static_cast<Eigen::Index>(k) * block_len,
                                         block_len);
      const double fro = rounds.squaredNorm();
      const double ones = rounds.rowwise().sum().squaredNorm();
      fro_sum += fro;
      fro_sq += fro * fro;
      ones_sum += ones;
      ones_sq += ones * ones;
    }
    done += todo;
  }
  McEstimate est;
  const double n = static_cast<double>(draws);
  est.fro_mean = fro_sum / n;
  est.ones_mean = ones_sum / n;
  est.fro_se = std::sqrt(std::max(0.0, fro_sq / n - est.fro_mean * est.fro_mean) / n);
  est.ones_se =
      std::sqrt(std::max(0.0, ones_sq / n - est.ones_mean * est.ones_mean) / n);
  return est;
}

// Random feasible problem instance shared by the validation tests.
struct RandomInstance {
  oadfl::MixingMatrix w;
  oadfl::BeamformerSet beams;
  oadfl::ChannelSet chans;
  oadfl::Vec scales;
};

inline RandomInstance make_random_instance(int m, int n, double snr_db,
                                           std::uint64_t seed, double p0 = 1.0,
                                           double sparsity = 0.25) {
  using namespace oadfl;
  RandomInstance inst;
  const auto g = generate_random(m, sparsity, seed);
  inst.w = random_feasible_mixing(g, seed + 1);
  inst.chans = sample_round(g, {snr_db, p0}, n, n, seed + 2);
  auto rng = make_rng(seed, "instance-beams");
  inst.beams.transmit.resize(m);
  inst.beams.receive.resize(m);
  for (int i = 0; i < m; ++i) {
    CMat u(n, 1), f(n, 1);
    fill_complex_gaussian(u, rng);
    fill_complex_gaussian(f, rng);
    inst.beams.transmit[static_cast<std::size_t>(i)] =
        std::sqrt(p0 / 2.0 / u.col(0).squaredNorm()) * u.col(0);
    inst.beams.receive[static_cast<std::size_t>(i)] = f.col(0);
  }
  inst.scales = Vec(m);
  Gaussian gauss;
  for (int i = 0; i < m; ++i) inst.scales[i] = 0.5 + std::abs(gauss(rng));
  return inst;
}

}  // namespace oadfl_test
