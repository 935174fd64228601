#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oadfl/aircomp.hpp"
#include "oadfl/beamopt.hpp"
#include "oadfl/channel.hpp"
#include "oadfl/common.hpp"
#include "oadfl/joint_design.hpp"
#include "oadfl/mixing.hpp"
#include "oadfl/tasks.hpp"

namespace oadfl {

struct RoundMetrics {
  int round = 0;
  double global_grad_norm_sq = 0.0;  // ||grad f(X*1/M)||^2 after the update
  double agreement_error = 0.0;      // consensus error of the aggregate
  double min_loss = 0.0;             // best device's global loss
  double avg_loss = 0.0;             // global loss at the averaged model
  double nmse_db = 0.0;
  double delta_w = 0.0;
  double fro_err_expect = 0.0;
  double ones_err_expect = 0.0;
  bool optimization_flagged = false;
};

// 10*log10(||ideal - actual||_F^2 / ||ideal||_F^2), floored at -200 dB.
inline double compute_nmse(const Mat& x_ideal, const Mat& x_hat) {
  if (x_ideal.rows() != x_hat.rows() || x_ideal.cols() != x_hat.cols())
    throw ShapeError("NMSE operands differ in shape");
  const double denom = x_ideal.squaredNorm();
  if (denom <= 0.0)
    throw DegenerateInput("ideal aggregate has zero norm; NMSE undefined");
  const double ratio = (x_ideal - x_hat).squaredNorm() / denom;
  if (ratio <= 1e-20) return -200.0;
  return std::max(-200.0, 10.0 * std::log10(ratio));
}

struct AggregationMode {
  bool over_the_air = false;
  const BeamformerSet* beams = nullptr;
  const ChannelSet* chans = nullptr;
  double p0 = 1.0;
  std::vector<ComplexFrame>* frames_out = nullptr;  // debug capture
};

// One decentralized SGD round: local stochastic gradients at the current
// models, gossip aggregation (exact or through the analog channel), then the
// local update. Metrics are computed on the post-update models except for the
// agreement error, which measures the consensus quality of the aggregate
// itself.
inline std::pair<Mat, RoundMetrics> dsgd_round(
    const Mat& x, const MixingMatrix& w, const AggregationMode& agg,
    const Task& task, double lambda, std::uint64_t round_seed,
    Mat* realized_error = nullptr, Mat* velocity = nullptr,
    double momentum = 0.0) {
  if (lambda <= 0.0) throw InvalidHyperparameters("learning rate must be positive");
  const int m = static_cast<int>(x.cols());
  const int d = static_cast<int>(x.rows());

  Mat grads(d, m);
  for (int i = 0; i < m; ++i)
    grads.col(i) = task.stochastic_gradient(x.col(i), i, round_seed);

  const Mat ideal = ideal_aggregate(x, w);
  Mat aggregate;
  std::vector<NormalizationRecord> recs;
  if (agg.over_the_air) {
    aggregate = aggregate_over_the_air(x, w, *agg.beams, *agg.chans, agg.p0,
                                       round_seed, &recs, agg.frames_out);
  } else {
    aggregate = ideal;
  }
  if (realized_error) *realized_error = ideal - aggregate;

  Mat step = grads;
  if (velocity && momentum != 0.0) {
    *velocity = momentum * (*velocity) + grads;
    step = *velocity;
  }
  Mat x_next = aggregate - lambda * step;

  RoundMetrics met;
  const Vec mean_agg = aggregate.rowwise().mean();
  double agree = 0.0;
  for (int i = 0; i < m; ++i) agree += (mean_agg - aggregate.col(i)).squaredNorm();
  met.agreement_error = agree / m;
  met.nmse_db = agg.over_the_air ? compute_nmse(ideal, aggregate) : -200.0;
  met.delta_w = delta(w.entries);
  const Vec mean_next = x_next.rowwise().mean();
  met.global_grad_norm_sq = task.global_gradient(mean_next).squaredNorm();
  met.avg_loss = task.global_loss(mean_next);
  double best = task.global_loss(x_next.col(0));
  for (int i = 1; i < m; ++i) best = std::min(best, task.global_loss(x_next.col(i)));
  met.min_loss = best;
  if (agg.over_the_air) {
    const int block = static_cast<int>((d % 2 == 0 ? d : d + 1) / 2);
    const Vec scales = normalization_scales(recs);
    const ErrorStats st = expected_errors(w.entries, *agg.beams, *agg.chans,
                                          scales, block);
    met.fro_err_expect = st.fro_expect;
    met.ones_err_expect = st.ones_expect;
  }
  return {std::move(x_next), met};
}

enum class Scheme { proposed, error_free, mb_no_mmo, zfb_no_mmo };

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::proposed: return "proposed";
    case Scheme::error_free: return "error-free";
    case Scheme::mb_no_mmo: return "mb-no-mmo";
    case Scheme::zfb_no_mmo: return "zfb-no-mmo";
  }
  return "?";
}

inline std::optional<Scheme> parse_scheme(const std::string& s) {
  if (s == "proposed") return Scheme::proposed;
  if (s == "error-free" || s == "error_free") return Scheme::error_free;
  if (s == "mb-no-mmo" || s == "mb_no_mmo") return Scheme::mb_no_mmo;
  if (s == "zfb-no-mmo" || s == "zfb_no_mmo") return Scheme::zfb_no_mmo;
  return std::nullopt;
}

enum class MixingInit { metropolis, min_delta, random_feasible, delta_target, file };

struct TrainOptions {
  int rounds = 100;
  double lambda = 0.02;
  double momentum = 0.0;
  int optimize_every = 1;
  Scheme scheme = Scheme::proposed;
  int n_tx = 4;
  int n_rx = 4;
  ChannelConfig channel;
  JointDesignOptions design;
  double omega = 0.1;  // smoothness estimate used by the design objective
  double alpha_sq = 0.0, beta_sq = 0.0, f_star = 0.0;
  MixingInit mixing_init = MixingInit::metropolis;
  double delta_target = 0.0;
  std::string mixing_file;
  double init_scale = 1.0;
  std::uint64_t seed = 1;
  std::string dump_channels;    // optional channel dump path
  std::string replay_channels;  // optional channel replay path
  std::string dump_frames;      // optional per-round frame dump path
  int zfb_sweeps = 3;
  std::function<void(const RoundMetrics&)> on_round;  // progress hook
};

struct RunRecord {
  std::vector<RoundMetrics> metrics;
  Mat final_models;
  MixingMatrix final_mixing;
  BeamformerSet final_beams;
  double final_delta_w = 0.0;
  int flagged_rounds = 0;
};

inline MixingMatrix make_initial_mixing(const TopologyGraph& g,
                                        const TrainOptions& opt) {
  switch (opt.mixing_init) {
    case MixingInit::metropolis:
      return metropolis_init(g);
    case MixingInit::min_delta:
      return minimize_delta(g);
    case MixingInit::random_feasible:
      return random_feasible_mixing(g, derive_seed(opt.seed, "mixing-init"));
    case MixingInit::delta_target:
      return delta_target_mixing(g.num_devices, opt.delta_target);
    case MixingInit::file: {
      MixingMatrix w;
      w.entries = load_matrix_csv(opt.mixing_file);
      w.pattern = g;
      validate_mixing(w, 1e-6);
      return w;
    }
  }
  throw ConfigError("unknown mixing init");
}

// Full training loop over T rounds. Per round: draw (or replay) the fading
// channels, exchange normalization statistics, re-optimize the transceivers
// and mixing matrix according to the scheme, aggregate over the air, and take
// the local gradient steps. A failed optimization keeps the previous design
// and flags the round.
inline RunRecord run_training(const TopologyGraph& g, const Task& task,
                              const TrainOptions& opt) {
  const int m = g.num_devices;
  if (task.num_devices() != m)
    throw ConfigError("task and topology disagree on device count");
  const int d = task.dim();
  const int block = (d % 2 == 0) ? d / 2 : (d + 1) / 2;

  ConvergenceParams params;
  params.omega = opt.omega;
  params.lambda = opt.lambda;
  params.alpha_sq = opt.alpha_sq;
  params.beta_sq = opt.beta_sq;
  params.f_star = opt.f_star;
  params.rounds = opt.rounds;
  params.num_devices = m;
  validate(params);

  MixingMatrix w = make_initial_mixing(g, opt);
  BeamformerSet beams = uniform_init(m, opt.n_tx, opt.n_rx, opt.channel.p0);
  const MixingMatrix w_fixed = w;  // schemes without mixing optimization keep it

  auto init_rng = make_rng(opt.seed, "init");
  const Vec x0 = opt.init_scale * gaussian_vector(d, init_rng);
  Mat x = x0.replicate(1, m);

  std::unique_ptr<ChannelDumpWriter> dump;
  std::unique_ptr<ChannelDumpReader> replay;
  std::unique_ptr<FrameDumpWriter> frame_dump;
  if (!opt.dump_channels.empty() && opt.scheme != Scheme::error_free)
    dump = std::make_unique<ChannelDumpWriter>(opt.dump_channels, block);
  if (!opt.replay_channels.empty() && opt.scheme != Scheme::error_free)
    replay = std::make_unique<ChannelDumpReader>(opt.replay_channels);
  if (!opt.dump_frames.empty() && opt.scheme != Scheme::error_free)
    frame_dump = std::make_unique<FrameDumpWriter>(opt.dump_frames, m, block);

  Mat velocity = Mat::Zero(d, m);
  RunRecord rec;
  rec.metrics.reserve(static_cast<std::size_t>(opt.rounds));

  for (int t = 0; t < opt.rounds; ++t) {
    const std::uint64_t round_seed = derive_seed(opt.seed, "round", t);
    bool flagged = false;
    ChannelSet chans;
    AggregationMode agg;
    agg.p0 = opt.channel.p0;

    if (opt.scheme != Scheme::error_free) {
      if (replay) {
        auto loaded = replay->read_round();
        if (!loaded)
          throw std::runtime_error("channel replay exhausted at round " +
                                   std::to_string(t));
        chans = std::move(*loaded);
      } else {
        chans = sample_round(g, opt.channel, opt.n_tx, opt.n_rx, round_seed);
      }
      if (dump) dump->append(chans);

      const Vec scales = normalization_scales(compute_normalization(x).second);
      if (t % std::max(1, opt.optimize_every) == 0) {
        try {
          switch (opt.scheme) {
            case Scheme::proposed: {
              auto res = optimize_joint(w, beams, chans, scales, params,
                                        opt.channel.p0, block, opt.design);
              w = std::move(res.w);
              beams = std::move(res.beams);
              break;
            }
            case Scheme::mb_no_mmo: {
              const double gv = g_factor(delta(w_fixed.entries), params);
              const auto weights = make_error_weights(opt.design.mode, gv, params);
              beams = ao_beam_sweep(w_fixed.entries, beams, chans, scales,
                                    weights, opt.channel.p0, opt.design.i1_max,
                                    block);
              break;
            }
            case Scheme::zfb_no_mmo:
              beams = zfb_fit(w_fixed.entries, chans, scales, opt.channel.p0,
                              opt.zfb_sweeps);
              break;
            case Scheme::error_free:
              break;
          }
        } catch (const std::exception&) {
          flagged = true;  // keep the previous round's design
        }
      }
      agg.over_the_air = true;
      agg.beams = &beams;
      agg.chans = &chans;
    }

    std::vector<ComplexFrame> frames;
    if (frame_dump) agg.frames_out = &frames;
    const MixingMatrix& w_round =
        (opt.scheme == Scheme::mb_no_mmo || opt.scheme == Scheme::zfb_no_mmo)
            ? w_fixed
            : w;
    auto [x_next, met] =
        dsgd_round(x, w_round, agg, task, opt.lambda, round_seed, nullptr,
                   opt.momentum != 0.0 ? &velocity : nullptr, opt.momentum);
    if (frame_dump) frame_dump->append(frames);
    x = std::move(x_next);
    met.round = t;
    met.optimization_flagged = flagged;
    if (flagged) ++rec.flagged_rounds;
    if (opt.on_round) opt.on_round(met);
    rec.metrics.push_back(met);
  }
  rec.final_models = std::move(x);
  rec.final_mixing =
      (opt.scheme == Scheme::mb_no_mmo || opt.scheme == Scheme::zfb_no_mmo)
          ? w_fixed
          : w;
  rec.final_beams = beams;
  rec.final_delta_w = delta(rec.final_mixing.entries);
  return rec;
}

}  // namespace oadfl
