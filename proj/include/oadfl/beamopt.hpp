#pragma once

#include <cmath>
#include <vector>

#include "oadfl/beamformers.hpp"
#include "oadfl/channel.hpp"
#include "oadfl/common.hpp"
#include "oadfl/convergence.hpp"
#include "oadfl/mixing.hpp"

namespace oadfl {

// Quadratic form of the transmit subproblem restricted to one device:
// objective = u^H m_mat u - 2*Re{n_vec^H u} + const, scaled so that it equals
// the restriction of the weighted error objective exactly (the finite
// difference of that objective is 2*(m_mat*u - n_vec)).
struct QuadraticFormU {
  CMat m_mat;
  CVec n_vec;
};

// Combiner subproblem restricted to one device:
// objective = f^H a_mat f - 4*Re{b_vec^H f} + const.
struct QuadraticFormF {
  CMat a_mat;
  CVec b_vec;
};

inline QuadraticFormU build_u_forms(int p, const Mat& w,
                                    const std::vector<CVec>& combiners,
                                    const ChannelSet& cs, const Vec& scales,
                                    const ErrorWeightSpec& weights,
                                    int block_len) {
  const int n_tx = cs.n_tx;
  QuadraticFormU form;
  form.m_mat = CMat::Zero(n_tx, n_tx);
  form.n_vec = CVec::Zero(n_tx);
  CVec a_sum = CVec::Zero(n_tx);
  double w_sum = 0.0;
  const double c2 = 2.0 * block_len;
  for (int i : cs.neighbors[static_cast<std::size_t>(p)]) {
    // a_i = H<i,p>^H f_i; the receiving side of edge (i, p).
    const CVec a = cs.h(i, p).adjoint() * combiners[static_cast<std::size_t>(i)];
    form.m_mat.noalias() += c2 * weights.fro_weight * (a * a.adjoint());
    form.n_vec.noalias() += c2 * weights.fro_weight * (w(i, p) * scales[p]) * a;
    a_sum += a;
    w_sum += w(i, p) * scales[p];
  }
  if (weights.ones_weight != 0.0) {
    form.m_mat.noalias() += c2 * weights.ones_weight * (a_sum * a_sum.adjoint());
    form.n_vec.noalias() += c2 * weights.ones_weight * w_sum * a_sum;
  }
  form.m_mat = 0.5 * (form.m_mat + form.m_mat.adjoint().eval());
  return form;
}

struct SolveUResult {
  CVec u;
  double multiplier = 0.0;  // dual variable of the power constraint
};

// Power-constrained convex quadratic: minimize u^H M u - 2 Re{n^H u} subject
// to ||u||^2 <= p0/2. Interior case returns the pseudoinverse solution;
// otherwise the multiplier solves ||(M + x*I)^{-1} n||^2 = p0/2 by bisection
// (that norm is strictly decreasing in x).
inline SolveUResult solve_u(const QuadraticFormU& form, double p0) {
  SolveUResult res;
  const Eigen::Index n_tx = form.n_vec.size();
  res.u = CVec::Zero(n_tx);
  const double budget = p0 / 2.0;
  const double n_norm = form.n_vec.norm();
  if (n_norm == 0.0) return res;

  Eigen::SelfAdjointEigenSolver<CMat> es(form.m_mat);
  Vec mu = es.eigenvalues().cwiseMax(0.0);
  const CVec nt = es.eigenvectors().adjoint() * form.n_vec;
  const double cutoff = 1e-12 * std::max(mu.maxCoeff(), 0.0);

  // Interior optimum exists only if n lies in range(M); otherwise the power
  // constraint is necessarily active.
  double range_resid_sq = 0.0;
  CVec coeff = CVec::Zero(n_tx);
  for (Eigen::Index k = 0; k < n_tx; ++k) {
    if (mu[k] > cutoff)
      coeff[k] = nt[k] / mu[k];
    else
      range_resid_sq += std::norm(nt[k]);
  }
  if (range_resid_sq <= 1e-24 * n_norm * n_norm &&
      coeff.squaredNorm() <= budget) {
    res.u = es.eigenvectors() * coeff;
    res.multiplier = 0.0;
    return res;
  }

  auto power_at = [&](double x) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < n_tx; ++k) {
      const double d = mu[k] + x;
      acc += std::norm(nt[k]) / (d * d);
    }
    return acc;
  };
  double hi = n_norm / std::sqrt(budget);
  while (power_at(hi) > budget) hi *= 2.0;
  double lo = 0.0;
  double mid = hi;
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (lo + hi);
    const double pw = power_at(mid);
    if (std::abs(pw - budget) <= 1e-12 * std::max(1.0, budget)) break;
    if (pw > budget)
      lo = mid;
    else
      hi = mid;
  }
  for (Eigen::Index k = 0; k < n_tx; ++k) coeff[k] = nt[k] / (mu[k] + mid);
  res.u = es.eigenvectors() * coeff;
  res.multiplier = mid;
  return res;
}

inline QuadraticFormF build_f_forms(int p, const Mat& w,
                                    const BeamformerSet& beams,
                                    const ChannelSet& cs, const Vec& scales,
                                    const ErrorWeightSpec& weights,
                                    int block_len) {
  const int n_rx = cs.n_rx;
  const double c = static_cast<double>(block_len);
  QuadraticFormF form;
  form.a_mat = CMat::Zero(n_rx, n_rx);
  form.b_vec = CVec::Zero(n_rx);
  for (int q : cs.neighbors[static_cast<std::size_t>(p)]) {
    const CVec h = cs.h(p, q) * beams.transmit[static_cast<std::size_t>(q)];
    form.a_mat.noalias() +=
        (2.0 * c * (weights.fro_weight + weights.ones_weight)) * (h * h.adjoint());
    form.b_vec.noalias() += (c * weights.fro_weight * w(p, q) * scales[q]) * h;
    if (weights.ones_weight != 0.0) {
      // Everything in the transmitter-q aggregate that does not involve f_p.
      Complex rest(w(p, q) * scales[q], 0.0);
      for (int i : cs.neighbors[static_cast<std::size_t>(q)]) {
        if (i == p) continue;
        rest += w(i, q) * scales[q] -
                beams.receive[static_cast<std::size_t>(i)].dot(
                    cs.h(i, q) * beams.transmit[static_cast<std::size_t>(q)]);
      }
      form.b_vec.noalias() += (c * weights.ones_weight) * std::conj(rest) * h;
    }
  }
  form.a_mat += (c * (weights.fro_weight + weights.ones_weight) *
                 cs.noise_variance) * CMat::Identity(n_rx, n_rx);
  form.a_mat = 0.5 * (form.a_mat + form.a_mat.adjoint().eval());
  return form;
}

// Unconstrained convex quadratic; the optimum is f = 2*A^{-1} b. Singular A
// (possible only at zero noise) is reported so the caller can add a ridge.
inline CVec solve_f(const QuadraticFormF& form) {
  Eigen::SelfAdjointEigenSolver<CMat> es(form.a_mat);
  const Vec mu = es.eigenvalues();
  const double top = std::max(mu.maxCoeff(), 0.0);
  if (mu.minCoeff() <= 1e-14 * std::max(top, 1e-300))
    throw RequiresRegularization("combiner system matrix is singular");
  const CVec bt = es.eigenvectors().adjoint() * form.b_vec;
  return es.eigenvectors() * (2.0 * bt.array() / mu.array()).matrix();
}

inline CVec solve_f_with_ridge(const QuadraticFormF& form) {
  try {
    return solve_f(form);
  } catch (const RequiresRegularization&) {
    QuadraticFormF ridged = form;
    ridged.a_mat += 1e-12 * CMat::Identity(form.a_mat.rows(), form.a_mat.cols());
    return solve_f(ridged);
  }
}

// Inner alternating sweep of the design loop: all transmit vectors (their
// subproblems are separable given the combiners), then the combiners one by
// one in Gauss-Seidel order. Each half-step is an exact convex minimization,
// so the weighted error objective never increases. `trace`, when given,
// receives the objective after every half-step.
inline BeamformerSet ao_beam_sweep(const Mat& w, const BeamformerSet& beams0,
                                   const ChannelSet& cs, const Vec& scales,
                                   const ErrorWeightSpec& weights, double p0,
                                   int i1_max, int block_len,
                                   std::vector<double>* trace = nullptr) {
  BeamformerSet beams = beams0;
  auto record = [&]() {
    if (trace)
      trace->push_back(weighted_error_objective(w, beams, cs, scales, weights,
                                                block_len));
  };
  for (int sweep = 0; sweep < i1_max; ++sweep) {
    for (int p = 0; p < cs.num_devices; ++p) {
      const auto form = build_u_forms(p, w, beams.receive, cs, scales, weights,
                                      block_len);
      beams.transmit[static_cast<std::size_t>(p)] = solve_u(form, p0).u;
    }
    record();
    for (int p = 0; p < cs.num_devices; ++p) {
      const auto form =
          build_f_forms(p, w, beams, cs, scales, weights, block_len);
      beams.receive[static_cast<std::size_t>(p)] = solve_f_with_ridge(form);
      record();
    }
  }
  return beams;
}

// Zero-forcing baseline: alternating least-squares fit of the alignment
// equations f_i^H H<i,j> u_j = w_ij * scale_j, ignoring channel noise. The
// final combiner pass solves its system exactly whenever the receiver has
// enough antennas, which also serves as the analytic alignment construction.
inline BeamformerSet zfb_fit(const Mat& w, const ChannelSet& cs,
                             const Vec& scales, double p0, int sweeps = 3) {
  BeamformerSet beams = uniform_init(cs.num_devices, cs.n_tx, cs.n_rx, p0);
  ErrorWeightSpec align;
  align.mode = ErrorWeightSpec::Mode::robust;
  align.fro_weight = 1.0;
  align.ones_weight = 0.0;

  auto fit_combiners = [&]() {
    for (int i = 0; i < cs.num_devices; ++i) {
      const auto& nbrs = cs.neighbors[static_cast<std::size_t>(i)];
      if (nbrs.empty()) {
        beams.receive[static_cast<std::size_t>(i)].setZero();
        continue;
      }
      CMat rows(static_cast<Eigen::Index>(nbrs.size()), cs.n_rx);
      CVec target(static_cast<Eigen::Index>(nbrs.size()));
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        const int j = nbrs[k];
        rows.row(static_cast<Eigen::Index>(k)) =
            (cs.h(i, j) * beams.transmit[static_cast<std::size_t>(j)]).adjoint();
        target[static_cast<Eigen::Index>(k)] = Complex(w(i, j) * scales[j], 0.0);
      }
      // Minimum-norm least squares of rows * f = target.
      beams.receive[static_cast<std::size_t>(i)] =
          rows.completeOrthogonalDecomposition().solve(target);
    }
  };

  fit_combiners();
  for (int s = 0; s < sweeps; ++s) {
    for (int p = 0; p < cs.num_devices; ++p) {
      const auto form =
          build_u_forms(p, w, beams.receive, cs, scales, align, 1);
      beams.transmit[static_cast<std::size_t>(p)] = solve_u(form, p0).u;
    }
    fit_combiners();
  }
  return beams;
}

}  // namespace oadfl
