#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "oadfl/beamformers.hpp"
#include "oadfl/channel.hpp"
#include "oadfl/common.hpp"
#include "oadfl/spectral.hpp"

namespace oadfl {

struct ConvergenceParams {
  double omega = 0.1;    // gradient Lipschitz constant
  double lambda = 0.02;  // learning rate, must satisfy lambda <= 1/omega
  double alpha_sq = 0.0; // stochastic-gradient variance bound
  double beta_sq = 0.0;  // data-heterogeneity bound
  double f_star = 0.0;   // loss lower bound
  int rounds = 150;      // T
  int num_devices = 30;  // M
};

inline void validate(const ConvergenceParams& p) {
  if (p.omega <= 0.0 || p.lambda <= 0.0)
    throw InvalidHyperparameters("omega and lambda must be positive");
  if (p.lambda > 1.0 / p.omega)
    throw InvalidHyperparameters(
        "learning rate violates lambda <= 1/omega (max admissible " +
        std::to_string(1.0 / p.omega) + ")");
  if (p.alpha_sq < 0.0 || p.beta_sq < 0.0)
    throw InvalidHyperparameters("variance bounds must be nonnegative");
  if (p.num_devices < 1 || p.rounds < 0)
    throw InvalidHyperparameters("device/round counts out of range");
}

// G(W) = omega^2 / ((1 - sqrt(delta))^2 - 27*M*lambda^2*omega^2).
// The denominator must be positive or the convergence bound is vacuous.
inline double g_factor(double delta_value, const ConvergenceParams& p) {
  if (delta_value < 0.0 || delta_value > 1.0)
    throw InvalidHyperparameters("delta must lie in [0, 1]");
  const double m = static_cast<double>(p.num_devices);
  const double root = 1.0 - std::sqrt(delta_value);
  const double denom = root * root - 27.0 * m * p.lambda * p.lambda * p.omega * p.omega;
  if (denom <= 0.0) {
    const double max_lambda =
        root / (p.omega * std::sqrt(27.0 * m));
    throw InvalidHyperparameters(
        "G(W) denominator is nonpositive at delta=" + std::to_string(delta_value) +
        "; maximal admissible lambda is " + std::to_string(max_lambda));
  }
  return p.omega * p.omega / denom;
}

// Weights put on the two communication-error expectations when assembling
// optimization objectives. Paper mode keeps both terms; robust mode folds the
// ones-term into the Frobenius weight via ||E*1||^2 <= M*||E||_F^2.
struct ErrorWeightSpec {
  enum class Mode { paper, robust };
  Mode mode = Mode::paper;
  double fro_weight = 0.0;
  double ones_weight = 0.0;
};

inline ErrorWeightSpec make_error_weights(ErrorWeightSpec::Mode mode,
                                          double g_value,
                                          const ConvergenceParams& p) {
  const double m = static_cast<double>(p.num_devices);
  const double inv_l2 = 1.0 / (p.lambda * p.lambda);
  ErrorWeightSpec w;
  w.mode = mode;
  if (mode == ErrorWeightSpec::Mode::paper) {
    w.fro_weight = 9.0 * g_value;
    w.ones_weight = inv_l2 / (m * m);
  } else {
    w.fro_weight = inv_l2 / m + 9.0 * g_value;
    w.ones_weight = 0.0;
  }
  return w;
}

// Effective complex gain f_i^H H<i,p> u_p per ordered edge (receiver i,
// transmitter p); zero where no edge exists.
inline CMat effective_gains(const BeamformerSet& beams, const ChannelSet& cs) {
  const int m = cs.num_devices;
  CMat g = CMat::Zero(m, m);
  for (int i = 0; i < m; ++i)
    for (int p : cs.neighbors[i])
      g(i, p) = beams.receive[static_cast<std::size_t>(i)].dot(
          cs.h(i, p) * beams.transmit[static_cast<std::size_t>(p)]);
  return g;
}

inline double combiner_noise_power(const BeamformerSet& beams,
                                   const ChannelSet& cs) {
  double acc = 0.0;
  for (const auto& f : beams.receive) acc += f.squaredNorm();
  return cs.noise_variance * acc;
}

namespace detail {
// Misalignment sums of Proposition 2, written as completed squares per
// symbol: the (i,p) term is 2*|w_ip*v_p - g_ip|^2 and the ones-term uses the
// per-transmitter aggregate.
inline double misalign_fro(const Mat& w, const CMat& gains, const Vec& scales,
                           const ChannelSet& cs) {
  double acc = 0.0;
  for (int p = 0; p < cs.num_devices; ++p)
    for (int i : cs.neighbors[p]) {
      const Complex resid = w(i, p) * scales[p] - gains(i, p);
      acc += 2.0 * std::norm(resid);
    }
  return acc;
}

inline double misalign_ones(const Mat& w, const CMat& gains, const Vec& scales,
                            const ChannelSet& cs) {
  double acc = 0.0;
  for (int p = 0; p < cs.num_devices; ++p) {
    Complex y(0.0, 0.0);
    for (int i : cs.neighbors[p]) y += w(i, p) * scales[p] - gains(i, p);
    acc += 2.0 * std::norm(y);
  }
  return acc;
}
}  // namespace detail

// E||E||_F^2: closed-form expectation of the realized Frobenius aggregation
// error over symbols and noise. block_len is the number of complex symbols
// per round (D/2).
inline double expected_error_fro(const Mat& w, const BeamformerSet& beams,
                                 const ChannelSet& cs, const Vec& scales,
                                 int block_len) {
  const CMat gains = effective_gains(beams, cs);
  return block_len * (detail::misalign_fro(w, gains, scales, cs) +
                      combiner_noise_power(beams, cs));
}

// E||E*1||^2: same expectation for the row-summed error.
inline double expected_error_ones(const Mat& w, const BeamformerSet& beams,
                                  const ChannelSet& cs, const Vec& scales,
                                  int block_len) {
  const CMat gains = effective_gains(beams, cs);
  return block_len * (detail::misalign_ones(w, gains, scales, cs) +
                      combiner_noise_power(beams, cs));
}

struct ErrorStats {
  double fro_expect = 0.0;
  double ones_expect = 0.0;
};

inline ErrorStats expected_errors(const Mat& w, const BeamformerSet& beams,
                                  const ChannelSet& cs, const Vec& scales,
                                  int block_len) {
  const CMat gains = effective_gains(beams, cs);
  const double noise = combiner_noise_power(beams, cs);
  ErrorStats st;
  st.fro_expect = block_len * (detail::misalign_fro(w, gains, scales, cs) + noise);
  st.ones_expect = block_len * (detail::misalign_ones(w, gains, scales, cs) + noise);
  const double m = static_cast<double>(cs.num_devices);
  if (st.ones_expect > m * st.fro_expect + 1e-9 * (1.0 + m * st.fro_expect))
    throw InvalidMatrix("error expectations violate ||E*1||^2 <= M*||E||_F^2");
  return st;
}

// Weighted error objective rho_F * E||E||_F^2 + rho_1 * E||E*1||^2 for given
// weights; the building block of every design subproblem.
inline double weighted_error_objective(const Mat& w, const BeamformerSet& beams,
                                       const ChannelSet& cs, const Vec& scales,
                                       const ErrorWeightSpec& weights,
                                       int block_len) {
  const ErrorStats st = expected_errors(w, beams, cs, scales, block_len);
  return weights.fro_weight * st.fro_expect + weights.ones_weight * st.ones_expect;
}

// d(W,f,u) = 9G(W)*E||E||_F^2 + (1/(lambda^2 M^2))*E||E*1||^2, or the robust
// substitute (1/(lambda^2 M) + 9G(W))*E||E||_F^2.
inline double objective_d(const Mat& w, const BeamformerSet& beams,
                          const ChannelSet& cs, const Vec& scales,
                          const ConvergenceParams& p,
                          ErrorWeightSpec::Mode mode, int block_len) {
  const double g = g_factor(delta(w), p);
  return weighted_error_objective(w, beams, cs, scales,
                                  make_error_weights(mode, g, p), block_len);
}

// Right hand side of the convergence bound, averaging the error expectation
// series. f0 is the initial global loss.
inline double bound_rhs(const ConvergenceParams& p, double delta_value,
                        const std::vector<ErrorStats>& err_series, double f0) {
  validate(p);
  const double m = static_cast<double>(p.num_devices);
  const double g = g_factor(delta_value, p);
  const double lead = 0.5 - 27.0 * m * p.lambda * p.lambda * g;
  if (lead <= 0.0)
    throw InvalidHyperparameters(
        "leading denominator 1/2 - 27*M*lambda^2*G is nonpositive");
  double fro_mean = 0.0, ones_mean = 0.0;
  if (!err_series.empty()) {
    for (const auto& st : err_series) {
      fro_mean += st.fro_expect;
      ones_mean += st.ones_expect;
    }
    fro_mean /= static_cast<double>(err_series.size());
    ones_mean /= static_cast<double>(err_series.size());
  }
  const double t = std::max(1, p.rounds);
  const double q = (f0 - p.f_star) / (p.lambda * t) + p.alpha_sq / m;
  const double r =
      (3.0 * m * p.alpha_sq + 27.0 * m * p.beta_sq) * p.lambda * p.lambda;
  const double numer = q + r * g + 9.0 * g * fro_mean +
                       ones_mean / (p.lambda * p.lambda * m * m);
  return numer / lead;
}

// Surrogate objective of the slack-variable problem at a given delta_hat;
// q and r default to zero since the design loop never needs them. The error
// weights follow the requested mode so the same non-increase guarantee holds
// for both the paper objective and its robust substitute.
inline double surrogate_objective(const ConvergenceParams& p,
                                  ErrorWeightSpec::Mode mode, double delta_hat,
                                  double fro_expect, double ones_expect,
                                  double q = 0.0, double r = 0.0) {
  const double m = static_cast<double>(p.num_devices);
  const double g = g_factor(delta_hat, p);
  const double lead = 0.5 - 27.0 * m * p.lambda * p.lambda * g;
  if (lead <= 0.0)
    throw InvalidHyperparameters(
        "leading denominator 1/2 - 27*M*lambda^2*G is nonpositive");
  const ErrorWeightSpec w = make_error_weights(mode, g, p);
  const double numer =
      q + r * g + w.fro_weight * fro_expect + w.ones_weight * ones_expect;
  return numer / lead;
}

}  // namespace oadfl
