#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "oadfl/common.hpp"
#include "oadfl/convergence.hpp"
#include "oadfl/spectral.hpp"
#include "oadfl/topology.hpp"

namespace oadfl {

// Symmetric doubly stochastic mixing matrix tied to the graph pattern that
// defines its sparsity.
struct MixingMatrix {
  Mat entries;
  TopologyGraph pattern;

  int size() const { return static_cast<int>(entries.rows()); }
};

inline double delta(const MixingMatrix& w) { return delta(w.entries); }

inline void validate_mixing(const MixingMatrix& w, double tol = 1e-9) {
  const int m = w.size();
  if (w.pattern.num_devices != m)
    throw InvalidMatrix("mixing matrix and pattern disagree on size");
  require_symmetric(w.entries, tol);
  for (int i = 0; i < m; ++i) {
    if (std::abs(w.entries.row(i).sum() - 1.0) > 1e3 * tol)
      throw InvalidMatrix("row " + std::to_string(i) + " does not sum to 1");
    for (int j = 0; j < m; ++j) {
      if (w.entries(i, j) < -tol || w.entries(i, j) > 1.0 + tol)
        throw InvalidMatrix("entry outside [0,1]");
      if (i != j && !w.pattern.edge(i, j) && std::abs(w.entries(i, j)) > tol)
        throw InvalidMatrix("nonzero weight on absent link");
    }
  }
  if (is_connected(w.pattern) && delta(w.entries) >= 1.0)
    throw InvalidMatrix("delta(W) >= 1 on a connected pattern");
}

// Metropolis-Hastings weights: w_ij = 1/(1 + max(deg_i, deg_j)) on edges,
// diagonal absorbs the remainder. Satisfies every mixing invariant on any
// connected graph.
inline MixingMatrix metropolis_init(const TopologyGraph& g) {
  const int m = g.num_devices;
  MixingMatrix w;
  w.pattern = g;
  w.entries = Mat::Zero(m, m);
  std::vector<int> deg(m);
  for (int i = 0; i < m; ++i) deg[i] = g.degree(i);
  for (int i = 0; i < m; ++i) {
    double off = 0.0;
    for (int j = 0; j < m; ++j) {
      if (i == j || !g.edge(i, j)) continue;
      w.entries(i, j) = 1.0 / (1.0 + std::max(deg[i], deg[j]));
      off += w.entries(i, j);
    }
    w.entries(i, i) = 1.0 - off;
  }
  return w;
}

// Exact-delta family on the complete pattern: spectral projection of the
// identity onto the ball of radius sqrt(delta_value) around (1/M)*ones.
// Yields sqrt(d)*I + (1-sqrt(d))*ones/M with delta exactly delta_value.
inline MixingMatrix delta_target_mixing(int num_devices, double delta_value) {
  MixingMatrix w;
  w.pattern = generate_named(NamedTopology::complete, num_devices);
  w.entries =
      project_spectral(Mat::Identity(num_devices, num_devices), delta_value);
  return w;
}

// ---------------------------------------------------------------------------
// Feasible-set projections. The constraint set of the mixing subproblem is an
// intersection of
//   (a) the affine set {symmetric, zero off the pattern, row sums 1},
//   (b) the box [0,1]^{M x M},
//   (c) the spectral ball {||W - ones/M||_2 <= sqrt(delta_hat)},
// handled by Dykstra's alternating projections.
// ---------------------------------------------------------------------------

// Closed-form least-squares projection onto (a). Free variables are the
// diagonal and the pattern's upper-triangle entries (weight 2 in the
// Frobenius metric); the dual system matrix I + (D + Adj)/2 is SPD and is
// factorized once per pattern.
class PatternAffineProjector {
 public:
  explicit PatternAffineProjector(const TopologyGraph& g) : g_(g) {
    const int m = g.num_devices;
    Mat sys = Mat::Identity(m, m);
    for (int i = 0; i < m; ++i) {
      sys(i, i) += 0.5 * g.degree(i);
      for (int j = 0; j < m; ++j)
        if (i != j && g.edge(i, j)) sys(i, j) += 0.5;
    }
    solver_.compute(sys);
  }

  Mat operator()(const Mat& y) const {
    const int m = g_.num_devices;
    Mat s = 0.5 * (y + y.transpose());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        if (i != j && !g_.edge(i, j)) s(i, j) = 0.0;
    Vec resid = s.rowwise().sum() - Vec::Ones(m);
    Vec mu = solver_.solve(resid);
    Mat out = Mat::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      out(i, i) = s(i, i) - mu[i];
      for (int j = i + 1; j < m; ++j)
        if (g_.edge(i, j)) {
          out(i, j) = s(i, j) - 0.5 * (mu[i] + mu[j]);
          out(j, i) = out(i, j);
        }
    }
    return out;
  }

 private:
  TopologyGraph g_;
  Eigen::LDLT<Mat> solver_;
};

struct DykstraOptions {
  int max_iters = 500;
  double tol = 1e-10;
};

inline Mat dykstra_project(const Mat& start,
                           const std::vector<std::function<Mat(const Mat&)>>& projections,
                           const DykstraOptions& opts = {}) {
  Mat x = start;
  std::vector<Mat> increments(projections.size(), Mat::Zero(x.rows(), x.cols()));
  Mat prev_cycle = x;
  for (int it = 0; it < opts.max_iters; ++it) {
    for (std::size_t s = 0; s < projections.size(); ++s) {
      Mat y = projections[s](x + increments[s]);
      increments[s] = x + increments[s] - y;
      x = std::move(y);
    }
    if ((x - prev_cycle).norm() < opts.tol) break;
    prev_cycle = x;
  }
  return x;
}

// Projection onto the full mixing feasible set at slack delta_hat.
class MixingFeasibleProjector {
 public:
  MixingFeasibleProjector(const TopologyGraph& g, double delta_hat,
                          const DykstraOptions& opts = {})
      : affine_(g), delta_hat_(delta_hat), opts_(opts) {}

  Mat operator()(const Mat& y) const {
    std::vector<std::function<Mat(const Mat&)>> projs;
    projs.emplace_back([this](const Mat& v) { return affine_(v); });
    projs.emplace_back([](const Mat& v) {
      return v.cwiseMax(0.0).cwiseMin(1.0);
    });
    projs.emplace_back(
        [this](const Mat& v) { return project_spectral(v, delta_hat_); });
    return dykstra_project(y, projs, opts_);
  }

 private:
  PatternAffineProjector affine_;
  double delta_hat_;
  DykstraOptions opts_;
};

// ---------------------------------------------------------------------------
// Mixing-matrix subproblem: minimize the weighted error objective over the
// feasible set at fixed slack delta_hat, by projected gradient descent with
// Armijo backtracking.
// ---------------------------------------------------------------------------

namespace detail {

struct MixingProblem {
  CMat gains;       // effective gains, fixed during the solve
  Vec scales;
  double fro_weight = 0.0;
  double ones_weight = 0.0;
  double noise = 0.0;  // sigma_n^2 * sum ||f_i||^2
  int block_len = 1;
  const ChannelSet* cs = nullptr;

  double value(const Mat& w) const {
    const double ef = misalign_fro(w, gains, scales, *cs) + noise;
    const double eo = misalign_ones(w, gains, scales, *cs) + noise;
    return block_len * (fro_weight * ef + ones_weight * eo);
  }

  Mat gradient(const Mat& w) const {
    const int m = cs->num_devices;
    Mat grad = Mat::Zero(m, m);
    for (int p = 0; p < m; ++p) {
      Complex agg(0.0, 0.0);
      for (int i : cs->neighbors[p]) agg += w(i, p) * scales[p] - gains(i, p);
      for (int i : cs->neighbors[p]) {
        const Complex resid = w(i, p) * scales[p] - gains(i, p);
        grad(i, p) = 4.0 * block_len * scales[p] *
                     (fro_weight * resid.real() + ones_weight * agg.real());
      }
    }
    return 0.5 * (grad + grad.transpose());
  }

  // Upper bound on the gradient Lipschitz constant; keeps the first
  // backtracking trial near the feasible set so the projections stay cheap
  // and accurate.
  double lipschitz_bound() const {
    double worst = 0.0;
    for (int p = 0; p < cs->num_devices; ++p) {
      const double deg = static_cast<double>(cs->neighbors[p].size());
      worst = std::max(worst, scales[p] * scales[p] *
                                  (fro_weight + ones_weight * deg));
    }
    return std::max(8.0 * block_len * worst, 1e-12);
  }
};

inline MixingProblem make_mixing_problem(const BeamformerSet& beams,
                                         const ChannelSet& cs, const Vec& scales,
                                         const ErrorWeightSpec& weights,
                                         int block_len) {
  MixingProblem prob;
  prob.gains = effective_gains(beams, cs);
  prob.scales = scales;
  prob.fro_weight = weights.fro_weight;
  prob.ones_weight = weights.ones_weight;
  prob.noise = combiner_noise_power(beams, cs);
  prob.block_len = block_len;
  prob.cs = &cs;
  return prob;
}

}  // namespace detail

struct OptimizeMixingResult {
  MixingMatrix w;
  double objective = 0.0;
  double stationarity = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct MixingSolverOptions {
  int max_iters = 100;
  double tol = 1e-8;
  DykstraOptions dykstra;
};

inline OptimizeMixingResult optimize_mixing(
    const MixingMatrix& w0, double delta_hat, const ErrorWeightSpec& weights,
    const BeamformerSet& beams, const ChannelSet& cs, const Vec& scales,
    int block_len, const MixingSolverOptions& opts = {}) {
  validate_mixing(w0, 1e-6);
  if (delta(w0.entries) > delta_hat + 1e-9)
    throw InfeasibleStart("starting matrix violates delta(W) <= delta_hat");

  const auto prob =
      detail::make_mixing_problem(beams, cs, scales, weights, block_len);
  MixingFeasibleProjector project(w0.pattern, delta_hat, opts.dykstra);

  Mat w = w0.entries;
  double f = prob.value(w);
  OptimizeMixingResult res;
  res.converged = false;
  const double step0 = 1.0 / prob.lipschitz_bound();
  double resid = 0.0;
  int it = 0;
  for (; it < opts.max_iters; ++it) {
    const Mat grad = prob.gradient(w);
    Mat cand = project(w - step0 * grad);  // also the residual probe
    resid = (cand - w).norm();
    if (resid <= opts.tol * (1.0 + w.norm())) {
      res.converged = true;
      break;
    }
    bool moved = false;
    double step = step0;
    for (int bt = 0; bt < 40; ++bt) {
      const double dir = (grad.array() * (cand - w).array()).sum();
      if (dir > -1e-15) break;  // stationary up to projection accuracy
      const double fc = prob.value(cand);
      if (fc <= f + 1e-4 * dir) {
        w = std::move(cand);
        f = fc;
        moved = true;
        break;
      }
      step *= 0.5;
      cand = project(w - step * grad);
    }
    if (!moved) {
      res.converged = true;
      break;
    }
  }
  res.w.entries = w;
  res.w.pattern = w0.pattern;
  res.objective = f;
  res.iterations = it;
  res.stationarity = resid;
  return res;
}

struct SpectralSlack {
  double delta_hat = 0.0;
};

struct AoMixingResult {
  MixingMatrix w;
  SpectralSlack slack;
  std::vector<double> objective_trace;  // surrogate value after every half-step
  bool converged = false;
};

// Alternation of the mixing subproblem with the slack update
// delta_hat <- delta(W); the surrogate objective is non-increasing across
// both half-steps.
inline AoMixingResult ao_mixing_loop(const MixingMatrix& w0,
                                     const BeamformerSet& beams,
                                     const ChannelSet& cs, const Vec& scales,
                                     const ConvergenceParams& params,
                                     ErrorWeightSpec::Mode mode, int i2_max,
                                     int block_len,
                                     const MixingSolverOptions& opts = {},
                                     double rel_tol = 1e-9) {
  AoMixingResult out;
  out.w = w0;
  double delta_hat = delta(w0.entries);
  auto record = [&](double dh) {
    const ErrorStats st =
        expected_errors(out.w.entries, beams, cs, scales, block_len);
    out.objective_trace.push_back(
        surrogate_objective(params, mode, dh, st.fro_expect, st.ones_expect));
  };
  record(delta_hat);
  for (int i2 = 0; i2 < i2_max; ++i2) {
    const double g = g_factor(delta_hat, params);
    const ErrorWeightSpec weights = make_error_weights(mode, g, params);
    auto res = optimize_mixing(out.w, delta_hat, weights, beams, cs, scales,
                               block_len, opts);
    out.w = res.w;
    record(delta_hat);
    delta_hat = std::min(delta_hat, delta(out.w.entries));
    record(delta_hat);
    const std::size_t n = out.objective_trace.size();
    const double before = out.objective_trace[n - 3];
    const double after = out.objective_trace[n - 1];
    if (before - after <= rel_tol * std::max(1.0, std::abs(before))) {
      out.converged = true;
      break;
    }
  }
  out.slack.delta_hat = delta_hat;
  return out;
}

// ---------------------------------------------------------------------------
// Feasible-matrix generators used by baselines and experiments.
// ---------------------------------------------------------------------------

// Metropolis weights plus a random symmetric pattern-sparse perturbation,
// re-projected onto the feasible set. Used where a "random mixing matrix"
// baseline is called for; the achieved delta is whatever the projection gives.
inline MixingMatrix random_feasible_mixing(const TopologyGraph& g,
                                           std::uint64_t seed,
                                           double perturbation = 0.25,
                                           double delta_cap = 1.0 - 1e-6) {
  MixingMatrix w = metropolis_init(g);
  const int m = g.num_devices;
  auto rng = make_rng(seed, "mixing-perturb");
  Gaussian gauss;
  Mat noise = Mat::Zero(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j)
      if (g.edge(i, j)) {
        noise(i, j) = perturbation * gauss(rng);
        noise(j, i) = noise(i, j);
      }
  MixingFeasibleProjector project(g, delta_cap);
  w.entries = project(w.entries + noise);
  return w;
}

// Smallest achievable delta on a pattern, located by bisection with a
// Dykstra feasibility probe. Approximate from above; the caller reads the
// achieved value off the returned matrix.
inline MixingMatrix minimize_delta(const TopologyGraph& g, int bisect_steps = 24,
                                   const DykstraOptions& dyk = {}) {
  MixingMatrix best = metropolis_init(g);
  const Mat seed_entries = best.entries;
  double hi = delta(best.entries);
  double lo = 0.0;
  auto feasible_at = [&](double dh, Mat& out) {
    MixingFeasibleProjector project(g, dh, dyk);
    Mat cand = project(seed_entries);
    const double tol = 1e-7;
    if ((cand.rowwise().sum() - Vec::Ones(g.num_devices)).cwiseAbs().maxCoeff() > tol)
      return false;
    if (cand.minCoeff() < -tol || cand.maxCoeff() > 1.0 + tol) return false;
    for (int i = 0; i < g.num_devices; ++i)
      for (int j = 0; j < g.num_devices; ++j)
        if (i != j && !g.edge(i, j) && std::abs(cand(i, j)) > tol) return false;
    if (delta(cand) > dh + 1e-6) return false;
    out = cand;
    return true;
  };
  for (int s = 0; s < bisect_steps; ++s) {
    const double mid = 0.5 * (lo + hi);
    Mat cand;
    if (feasible_at(mid, cand)) {
      hi = mid;
      best.entries = cand;
    } else {
      lo = mid;
    }
  }
  // Clean the winner so the invariants hold to reporting precision.
  MixingFeasibleProjector polish(g, std::max(hi, delta(best.entries)),
                                 DykstraOptions{2000, 1e-12});
  best.entries = polish(best.entries);
  return best;
}

// ---------------------------------------------------------------------------
// Serialization: dense CSV at full precision plus a sidecar metadata line.
// ---------------------------------------------------------------------------

inline void save_mixing_csv(const MixingMatrix& w, const std::string& path,
                            const std::string& topology_file = "") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  char buf[32];
  for (int i = 0; i < w.size(); ++i) {
    for (int j = 0; j < w.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", w.entries(i, j));
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
  std::ofstream meta(path + ".meta");
  std::snprintf(buf, sizeof(buf), "%.17g", delta(w.entries));
  meta << "delta=" << buf << " topology=" << topology_file << "\n";
}

inline Mat load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      row.push_back(std::stod(line.substr(pos, next - pos)));
      pos = next + 1;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": empty matrix");
  Mat m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw std::runtime_error(path + ": ragged matrix");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

}  // namespace oadfl
