#include <catch2/catch_amalgamated.hpp>

#include "mc_error_oracle.hpp"
#include "oadfl/joint_design.hpp"

using namespace oadfl;

namespace {

void check_monotone(const std::vector<double>& trace, double rel_tol = 1e-9) {
  REQUIRE(trace.size() >= 2);
  for (std::size_t k = 1; k < trace.size(); ++k)
    REQUIRE(trace[k] <=
            trace[k - 1] + rel_tol * std::max(1.0, std::abs(trace[k - 1])));
}

}  // namespace

TEST_CASE("joint design: monotone trace, feasible output, real improvement") {
  for (std::uint64_t seed : {5ull, 17ull}) {
    const auto g = generate_random(6, 0.3, seed);
    const auto w0 = metropolis_init(g);
    const auto chans = sample_round(g, {5.0, 1.0}, 3, 3, seed + 1);
    auto rng = make_rng(seed, "joint-scales");
    Gaussian gauss;
    Vec scales(6);
    for (int i = 0; i < 6; ++i) scales[i] = 0.5 + std::abs(gauss(rng));
    ConvergenceParams params;
    params.num_devices = 6;

    JointDesignOptions opts;
    opts.j_max = 3;
    opts.i1_max = 4;
    opts.i2_max = 2;
    const auto beams0 = uniform_init(6, 3, 3, 1.0);
    const auto res =
        optimize_joint(w0, beams0, chans, scales, params, 1.0, 16, opts);

    check_monotone(res.trace);
    REQUIRE(res.trace.back() < res.trace.front());
    REQUIRE_NOTHROW(validate_mixing(res.w, 1e-7));
    REQUIRE(power_feasible(res.beams, 1.0));
    REQUIRE(delta(res.w.entries) <= res.slack.delta_hat + 1e-9);
    REQUIRE(res.slack.delta_hat <= delta(w0.entries) + 1e-12);
  }
}

TEST_CASE("joint design with robust weights is also monotone") {
  const auto g = generate_random(5, 0.4, 31);
  const auto w0 = metropolis_init(g);
  const auto chans = sample_round(g, {0.0, 1.0}, 2, 2, 32);
  Vec scales = Vec::Constant(5, 1.1);
  ConvergenceParams params;
  params.num_devices = 5;
  JointDesignOptions opts;
  opts.j_max = 2;
  opts.i1_max = 3;
  opts.i2_max = 2;
  opts.mode = ErrorWeightSpec::Mode::robust;
  const auto res = optimize_joint(w0, uniform_init(5, 2, 2, 1.0), chans, scales,
                                  params, 1.0, 8, opts);
  check_monotone(res.trace);
  REQUIRE_NOTHROW(validate_mixing(res.w, 1e-7));
}

TEST_CASE("joint design converges immediately from a zero-error configuration") {
  const auto g4 = generate_named(NamedTopology::complete, 4);
  const auto w0 = metropolis_init(g4);
  Vec scales = Vec::Ones(4);
  ChannelSet cs;
  cs.num_devices = 4;
  cs.n_tx = cs.n_rx = 1;
  cs.noise_variance = 0.0;
  cs.mats.resize(16);
  cs.neighbors.resize(4);
  for (int i = 0; i < 4; ++i) {
    cs.neighbors[i] = neighbor_set(g4, i);
    for (int j : cs.neighbors[i]) {
      CMat h(1, 1);
      h(0, 0) = Complex(w0.entries(i, j), 0.0);
      cs.mats[static_cast<std::size_t>(i) * 4 + j] = h;
    }
  }
  BeamformerSet aligned;
  aligned.transmit.assign(4, CVec::Constant(1, Complex(1, 0)));
  aligned.receive.assign(4, CVec::Constant(1, Complex(1, 0)));
  ConvergenceParams params;
  params.num_devices = 4;
  JointDesignOptions opts;
  opts.j_max = 2;
  opts.i1_max = 2;
  opts.i2_max = 1;
  const auto res =
      optimize_joint(w0, aligned, cs, scales, params, 4.0, 8, opts);
  REQUIRE(res.trace.front() == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(res.trace.back() <= res.trace.front() + 1e-12);
  REQUIRE(res.converged);
}
