#pragma once

#include <vector>

#include "oadfl/beamopt.hpp"
#include "oadfl/convergence.hpp"
#include "oadfl/mixing.hpp"

namespace oadfl {

struct JointDesignOptions {
  int j_max = 20;
  int i1_max = 50;
  int i2_max = 50;
  ErrorWeightSpec::Mode mode = ErrorWeightSpec::Mode::paper;
  MixingSolverOptions mixing;
  double rel_tol = 1e-9;
};

struct JointDesignResult {
  MixingMatrix w;
  BeamformerSet beams;
  SpectralSlack slack;
  std::vector<double> trace;  // surrogate objective after every half-step
  bool converged = false;
};

// Full alternating optimization over {W, f, u}: per outer iteration, i1 beam
// sweeps at fixed (W, delta_hat), then i2 rounds of the mixing subproblem
// alternated with the slack update delta_hat <- delta(W). Every half-step is
// an exact minimization of a convex restriction of the same surrogate, so the
// recorded trace is non-increasing.
inline JointDesignResult optimize_joint(const MixingMatrix& w0,
                                        const BeamformerSet& beams0,
                                        const ChannelSet& cs, const Vec& scales,
                                        const ConvergenceParams& params,
                                        double p0, int block_len,
                                        const JointDesignOptions& opts = {}) {
  JointDesignResult out;
  out.w = w0;
  out.beams = beams0;
  double delta_hat = delta(w0.entries);

  auto surrogate_now = [&](double dh) {
    const ErrorStats st =
        expected_errors(out.w.entries, out.beams, cs, scales, block_len);
    return surrogate_objective(params, opts.mode, dh, st.fro_expect,
                               st.ones_expect);
  };
  out.trace.push_back(surrogate_now(delta_hat));

  for (int j = 0; j < opts.j_max; ++j) {
    const double cycle_start = out.trace.back();

    // Beamformer phase at fixed W and delta_hat. The sweep traces the
    // weighted error objective; dividing by the fixed leading denominator
    // turns those into surrogate values.
    {
      const double g = g_factor(delta_hat, params);
      const ErrorWeightSpec weights = make_error_weights(opts.mode, g, params);
      const double m = static_cast<double>(params.num_devices);
      const double lead = 0.5 - 27.0 * m * params.lambda * params.lambda * g;
      std::vector<double> dtrace;
      out.beams = ao_beam_sweep(out.w.entries, out.beams, cs, scales, weights,
                                p0, opts.i1_max, block_len, &dtrace);
      for (double v : dtrace) out.trace.push_back(v / lead);
    }

    // Mixing phase, refreshing the error weights as delta_hat shrinks.
    for (int i2 = 0; i2 < opts.i2_max; ++i2) {
      const double g = g_factor(delta_hat, params);
      const ErrorWeightSpec weights = make_error_weights(opts.mode, g, params);
      auto res = optimize_mixing(out.w, delta_hat, weights, out.beams, cs,
                                 scales, block_len, opts.mixing);
      out.w = res.w;
      out.trace.push_back(surrogate_now(delta_hat));
      const double before = out.trace.back();
      delta_hat = std::min(delta_hat, delta(out.w.entries));
      out.trace.push_back(surrogate_now(delta_hat));
      if (before - out.trace.back() <=
          opts.rel_tol * std::max(1.0, std::abs(before)))
        break;
    }

    if (cycle_start - out.trace.back() <=
        opts.rel_tol * std::max(1.0, std::abs(cycle_start))) {
      out.converged = true;
      break;
    }
  }
  out.slack.delta_hat = delta_hat;
  return out;
}

}  // namespace oadfl
