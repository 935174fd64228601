#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "oadfl/mixing.hpp"

using namespace oadfl;

namespace {

// Single-antenna channel set with prescribed complex gains per edge; lets
// tests pin f^H H u exactly by choosing unit beams.
ChannelSet scalar_channels(const TopologyGraph& g,
                           const std::function<Complex(int, int)>& h,
                           double noise_var) {
  ChannelSet cs;
  cs.num_devices = g.num_devices;
  cs.n_tx = cs.n_rx = 1;
  cs.noise_variance = noise_var;
  cs.mats.resize(static_cast<std::size_t>(g.num_devices) * g.num_devices);
  cs.neighbors.resize(g.num_devices);
  for (int i = 0; i < g.num_devices; ++i) {
    cs.neighbors[i] = neighbor_set(g, i);
    for (int j : cs.neighbors[i]) {
      CMat m(1, 1);
      m(0, 0) = h(i, j);
      cs.mats[static_cast<std::size_t>(i) * g.num_devices + j] = m;
    }
  }
  return cs;
}

BeamformerSet unit_beams(int m) {
  BeamformerSet b;
  b.transmit.assign(m, CVec::Constant(1, Complex(1.0, 0.0)));
  b.receive.assign(m, CVec::Constant(1, Complex(1.0, 0.0)));
  return b;
}

MixingMatrix random_feasible(int m, std::uint64_t seed, double sparsity = 0.3) {
  const auto g = generate_random(m, sparsity, seed);
  return random_feasible_mixing(g, seed);
}

}  // namespace

TEST_CASE("delta of reference matrices") {
  const int m = 5;
  Mat avg = Mat::Constant(m, m, 1.0 / m);
  REQUIRE(delta(avg) < 1e-12);
  REQUIRE(delta(Mat::Identity(m, m)) == Catch::Approx(1.0));

  Mat bad = Mat::Identity(3, 3);
  bad(0, 1) = 0.5;
  REQUIRE_THROWS_AS(delta(bad), InvalidMatrix);
}

TEST_CASE("delta of the metropolis ring matches the circulant closed form") {
  const auto ring = generate_named(NamedTopology::ring, 4);
  const auto w = metropolis_init(ring);
  // Circulant eigenvalues 1/3 + (2/3)cos(2*pi*k/4): second largest magnitude
  // is 1/3, so delta is 1/9.
  REQUIRE(delta(w.entries) == Catch::Approx(1.0 / 9.0).margin(1e-12));
}

TEST_CASE("metropolis weights on small named graphs") {
  const auto pair = metropolis_init(generate_named(NamedTopology::complete, 2));
  REQUIRE(pair.entries.isApprox(Mat::Constant(2, 2, 0.5), 1e-12));

  const auto ring = metropolis_init(generate_named(NamedTopology::ring, 4));
  for (int i = 0; i < 4; ++i) {
    REQUIRE(ring.entries(i, i) == Catch::Approx(1.0 / 3.0));
    REQUIRE(ring.entries(i, (i + 1) % 4) == Catch::Approx(1.0 / 3.0));
  }

  const auto star = metropolis_init(generate_named(NamedTopology::star, 3));
  REQUIRE(star.entries(0, 1) == Catch::Approx(1.0 / 3.0));
  REQUIRE(star.entries(0, 2) == Catch::Approx(1.0 / 3.0));
  REQUIRE(star.entries(0, 0) == Catch::Approx(1.0 / 3.0));
  REQUIRE(star.entries(1, 1) == Catch::Approx(2.0 / 3.0));
  REQUIRE(star.entries(2, 2) == Catch::Approx(2.0 / 3.0));
}

TEST_CASE("metropolis satisfies every mixing invariant on random graphs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = generate_random(9, 0.5, seed);
    const auto w = metropolis_init(g);
    REQUIRE_NOTHROW(validate_mixing(w, 1e-12));
    REQUIRE(delta(w.entries) < 1.0);
  }
}

TEST_CASE("spectral projection: fixed point, hand example, bound, idempotence") {
  const auto ring = metropolis_init(generate_named(NamedTopology::ring, 4));
  const Mat same = project_spectral(ring.entries, 0.5);
  REQUIRE((same - ring.entries).cwiseAbs().maxCoeff() < 1e-12);

  const Mat clipped = project_spectral(Mat::Identity(2, 2), 0.25);
  Mat expect(2, 2);
  expect << 0.75, 0.25, 0.25, 0.75;
  REQUIRE((clipped - expect).cwiseAbs().maxCoeff() < 1e-12);

  auto rng = make_rng(3, "spectral-test");
  for (int rep = 0; rep < 20; ++rep) {
    Mat y(6, 6);
    fill_gaussian(y, rng);
    y = Mat(0.5 * (y + y.transpose()));
    const double cap = 0.3;
    const Mat p = project_spectral(y, cap);
    REQUIRE(delta(p) <= cap + 1e-9);
    const Mat pp = project_spectral(p, cap);
    REQUIRE((pp - p).cwiseAbs().maxCoeff() < 1e-12);
  }

  REQUIRE_THROWS_AS(project_spectral(Mat::Identity(3, 3), -0.1),
                    InvalidHyperparameters);
}

TEST_CASE("contraction inequality holds for powers 1..20") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto w = random_feasible(7, seed);
    const double d = delta(w.entries);
    const int m = w.size();
    Mat pw = Mat::Identity(m, m);
    for (int k = 1; k <= 20; ++k) {
      pw = pw * w.entries;
      Mat dev = pw - Mat::Constant(m, m, 1.0 / m);
      Eigen::SelfAdjointEigenSolver<Mat> es(dev, Eigen::EigenvaluesOnly);
      const double norm2 = std::pow(es.eigenvalues().cwiseAbs().maxCoeff(), 2);
      REQUIRE(norm2 <= std::pow(d, k) + 1e-9);
    }
  }
}

TEST_CASE("delta equals the top-two eigenvalue identity of W^2") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto w = random_feasible(6 + static_cast<int>(seed % 3), seed);
    Eigen::SelfAdjointEigenSolver<Mat> es(w.entries * w.entries,
                                          Eigen::EigenvaluesOnly);
    const Vec lam = es.eigenvalues();  // ascending
    const double top_two = lam[lam.size() - 1] + lam[lam.size() - 2];
    REQUIRE(delta(w.entries) == Catch::Approx(top_two - 1.0).margin(1e-9));
  }
}

TEST_CASE("pattern affine projection lands in the set and is idempotent") {
  const auto g = generate_random(8, 0.4, 11);
  PatternAffineProjector proj(g);
  auto rng = make_rng(4, "affine-test");
  Mat y(8, 8);
  fill_gaussian(y, rng);
  y = Mat(0.5 * (y + y.transpose()));
  const Mat p = proj(y);
  REQUIRE((p.rowwise().sum() - Vec::Ones(8)).cwiseAbs().maxCoeff() < 1e-12);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      REQUIRE(p(i, j) == Catch::Approx(p(j, i)).margin(1e-12));
      if (i != j && !g.edge(i, j)) REQUIRE(p(i, j) == 0.0);
    }
  REQUIRE((proj(p) - p).cwiseAbs().maxCoeff() < 1e-12);

  const auto w = metropolis_init(g);
  REQUIRE((proj(w.entries) - w.entries).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mixing solve returns the start when it is already optimal") {
  const auto g = generate_named(NamedTopology::complete, 4);
  const auto w0 = metropolis_init(g);
  Vec scales = Vec::Constant(4, 1.5);
  const auto cs = scalar_channels(
      g, [&](int i, int j) { return Complex(w0.entries(i, j) * scales[j], 0.0); },
      0.0);
  const auto beams = unit_beams(4);
  ErrorWeightSpec weights{ErrorWeightSpec::Mode::paper, 3.0, 0.7};

  const double d0 = delta(w0.entries);
  auto res = optimize_mixing(w0, d0 + 0.1, weights, beams, cs, scales, 16);
  REQUIRE(res.objective == Catch::Approx(0.0).margin(1e-12));
  REQUIRE((res.w.entries - w0.entries).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("mixing solve matches a dense grid oracle on the 3-device family") {
  const auto g = generate_named(NamedTopology::complete, 3);
  const auto w0 = metropolis_init(g);
  Vec scales(3);
  scales << 1.0, 0.8, 1.3;
  auto rng = make_rng(17, "grid-oracle");
  Gaussian gauss;
  const auto cs = scalar_channels(
      g, [&](int, int) { return Complex(0.4 * gauss(rng), 0.4 * gauss(rng)); },
      0.05);
  const auto beams = unit_beams(3);
  ErrorWeightSpec weights{ErrorWeightSpec::Mode::paper, 2.0, 0.5};
  const int block = 8;

  // Constrained instance: the spectral cap binds; check the invariants.
  {
    const double delta_hat = 0.6;
    REQUIRE(delta(w0.entries) <= delta_hat);
    MixingSolverOptions opts;
    opts.max_iters = 400;
    opts.tol = 1e-10;
    auto res =
        optimize_mixing(w0, delta_hat, weights, beams, cs, scales, block, opts);
    REQUIRE_NOTHROW(validate_mixing(res.w, 1e-8));
    REQUIRE(delta(res.w.entries) <= delta_hat + 1e-9);
    REQUIRE(res.objective <=
            weighted_error_objective(w0.entries, beams, cs, scales, weights,
                                     block) + 1e-12);
  }

  // Oracle instance at delta_hat = 1 (no doubly stochastic matrix exceeds
  // delta 1, so the grid needs only the box constraints): independent dense
  // grid over the three free parameters with two-stage refinement.
  MixingSolverOptions opts;
  opts.max_iters = 600;
  opts.tol = 1e-11;
  auto res = optimize_mixing(w0, 1.0, weights, beams, cs, scales, block, opts);
  REQUIRE_NOTHROW(validate_mixing(res.w, 1e-8));

  auto objective_at = [&](double a, double b, double c, Mat& w) {
    w.resize(3, 3);
    w << 1 - a - b, a, b, a, 1 - a - c, c, b, c, 1 - b - c;
    return weighted_error_objective(w, beams, cs, scales, weights, block);
  };
  auto feasible = [&](const Mat& w) {
    return w.minCoeff() >= 0.0 && w.maxCoeff() <= 1.0;
  };
  double best = 1e300;
  double ba = 0, bb = 0, bc = 0;
  Mat w;
  for (double a = 0; a <= 1.0 + 1e-12; a += 0.02)
    for (double b = 0; b <= 1.0 - a + 1e-12; b += 0.02)
      for (double c = 0; c <= 1.0 + 1e-12; c += 0.02) {
        const double val = objective_at(a, b, c, w);
        if (val < best && feasible(w)) {
          best = val;
          ba = a; bb = b; bc = c;
        }
      }
  double fa = ba, fb = bb, fc = bc;
  for (double a = std::max(0.0, ba - 0.025); a <= ba + 0.025; a += 0.001)
    for (double b = std::max(0.0, bb - 0.025); b <= bb + 0.025; b += 0.001)
      for (double c = std::max(0.0, bc - 0.025); c <= bc + 0.025; c += 0.001) {
        const double val = objective_at(a, b, c, w);
        if (val < best && feasible(w)) {
          best = val;
          fa = a; fb = b; fc = c;
        }
      }
  for (double a = std::max(0.0, fa - 0.0015); a <= fa + 0.0015; a += 0.0001)
    for (double b = std::max(0.0, fb - 0.0015); b <= fb + 0.0015; b += 0.0001)
      for (double c = std::max(0.0, fc - 0.0015); c <= fc + 0.0015; c += 0.0001) {
        const double val = objective_at(a, b, c, w);
        if (val < best && feasible(w)) best = val;
      }
  REQUIRE(res.objective <= best + 1e-4);
  REQUIRE(res.objective >= best - 1e-4);
}

TEST_CASE("mixing solve with zero weights just preserves feasibility") {
  const auto g = generate_named(NamedTopology::complete, 4);
  const auto w0 = metropolis_init(g);
  Vec scales = Vec::Ones(4);
  auto rng = make_rng(5, "zero-weight");
  Gaussian gauss;
  const auto cs = scalar_channels(
      g, [&](int, int) { return Complex(gauss(rng), gauss(rng)); }, 0.1);
  ErrorWeightSpec weights{ErrorWeightSpec::Mode::paper, 0.0, 0.0};
  auto res = optimize_mixing(w0, 1.0, weights, unit_beams(4), cs, scales, 4);
  REQUIRE_NOTHROW(validate_mixing(res.w, 1e-8));
  REQUIRE(res.objective == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("mixing solve rejects an infeasible start") {
  const auto g = generate_named(NamedTopology::ring, 5);
  const auto w0 = metropolis_init(g);
  Vec scales = Vec::Ones(5);
  const auto cs = scalar_channels(g, [](int, int) { return Complex(1, 0); }, 0.1);
  ErrorWeightSpec weights{ErrorWeightSpec::Mode::paper, 1.0, 0.1};
  REQUIRE_THROWS_AS(optimize_mixing(w0, delta(w0.entries) / 2.0, weights,
                                    unit_beams(5), cs, scales, 4),
                    InfeasibleStart);
}

TEST_CASE("slack alternation is monotone and shrinks delta-hat") {
  const auto g = generate_random(6, 0.4, 21);
  const auto w0 = metropolis_init(g);
  Vec scales = Vec::Constant(6, 1.2);
  auto rng = make_rng(9, "ao-mixing");
  Gaussian gauss;
  const auto cs = scalar_channels(
      g, [&](int, int) { return Complex(0.5 * gauss(rng), 0.5 * gauss(rng)); },
      0.02);
  ConvergenceParams params;
  params.num_devices = 6;
  params.rounds = 50;

  auto res = ao_mixing_loop(w0, unit_beams(6), cs, scales, params,
                            ErrorWeightSpec::Mode::paper, 6, 16);
  REQUIRE(res.objective_trace.size() >= 3);
  for (std::size_t k = 1; k < res.objective_trace.size(); ++k)
    REQUIRE(res.objective_trace[k] <=
            res.objective_trace[k - 1] +
                1e-9 * std::max(1.0, std::abs(res.objective_trace[k - 1])));
  REQUIRE(res.slack.delta_hat <= delta(w0.entries) + 1e-12);
  REQUIRE_NOTHROW(validate_mixing(res.w, 1e-8));
}

TEST_CASE("surrogate objective is monotone in delta-hat") {
  ConvergenceParams params;
  params.num_devices = 10;
  for (double dh : {0.0, 0.2, 0.5, 0.8}) {
    const double lo = surrogate_objective(params, ErrorWeightSpec::Mode::paper,
                                          dh, 1.0, 2.0, 0.3, 0.4);
    const double hi = surrogate_objective(params, ErrorWeightSpec::Mode::paper,
                                          dh + 0.01, 1.0, 2.0, 0.3, 0.4);
    REQUIRE(hi > lo);
    const double lo_r = surrogate_objective(params, ErrorWeightSpec::Mode::robust,
                                            dh, 1.0, 2.0, 0.3, 0.4);
    const double hi_r = surrogate_objective(params, ErrorWeightSpec::Mode::robust,
                                            dh + 0.01, 1.0, 2.0, 0.3, 0.4);
    REQUIRE(hi_r > lo_r);
  }
}

TEST_CASE("feasible generators validate and minimize-delta improves on metropolis") {
  const auto g = generate_random(8, 0.5, 33);
  const auto rand_w = random_feasible_mixing(g, 7);
  REQUIRE_NOTHROW(validate_mixing(rand_w, 1e-7));
  REQUIRE(delta(rand_w.entries) < 1.0);

  const auto best = minimize_delta(g);
  REQUIRE_NOTHROW(validate_mixing(best, 1e-7));
  REQUIRE(delta(best.entries) <= delta(metropolis_init(g).entries) + 1e-9);
}

TEST_CASE("exact-delta targets via spectral projection of the identity") {
  for (double target : {0.0, 0.32, 0.6, 0.9}) {
    const auto w = delta_target_mixing(12, target);
    REQUIRE_NOTHROW(validate_mixing(w, 1e-9));
    REQUIRE(delta(w.entries) == Catch::Approx(target).margin(1e-9));
  }
}

TEST_CASE("mixing CSV round-trips with sidecar metadata") {
  const auto g = generate_random(5, 0.3, 2);
  const auto w = metropolis_init(g);
  save_mixing_csv(w, "test_mixing_w.csv", "topo.txt");
  const Mat back = load_matrix_csv("test_mixing_w.csv");
  REQUIRE((back - w.entries).cwiseAbs().maxCoeff() == 0.0);
  std::ifstream meta("test_mixing_w.csv.meta");
  std::string line;
  REQUIRE(std::getline(meta, line));
  REQUIRE(line.find("delta=") == 0);
  REQUIRE(line.find("topology=topo.txt") != std::string::npos);
  std::remove("test_mixing_w.csv");
  std::remove("test_mixing_w.csv.meta");
}
