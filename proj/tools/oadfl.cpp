// Command-line front end: single runs, experiment sweeps, scheme comparisons
// on shared channel realizations, topology generation, bound evaluation, and
// the Monte Carlo self test.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oadfl/config.hpp"
#include "oadfl/convergence.hpp"
#include "oadfl/io.hpp"
#include "oadfl/joint_design.hpp"
#include "oadfl/rng.hpp"
#include "oadfl/trainer.hpp"

namespace fs = std::filesystem;
using namespace oadfl;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir = "out";
  long seed = -1;
  int optimize_every = -1;
  std::string scheme;
  std::string dump_channels, replay_channels, dump_frames;
  std::string log_level = "info";
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "config file")->required();
  cmd->add_option("--out-dir", flags.out_dir, "output directory");
  cmd->add_option("--seed", flags.seed, "override run.seed");
  cmd->add_option("--optimize-every", flags.optimize_every,
                  "re-optimize (W,f,u) every k rounds");
  cmd->add_option("--scheme", flags.scheme, "override run.scheme");
  cmd->add_option("--dump-channels", flags.dump_channels,
                  "write sampled channels to this file");
  cmd->add_option("--replay-channels", flags.replay_channels,
                  "read channels from this file instead of sampling");
  cmd->add_option("--dump-frames", flags.dump_frames,
                  "write per-round transmit frames (debug)");
  cmd->add_option("--log-level", flags.log_level, "quiet|info|debug");
}

KeyValueConfig load_merged(const CommonFlags& flags) {
  KeyValueConfig kv = KeyValueConfig::parse_file(flags.config_path);
  kv.apply_env_overrides();
  if (flags.seed >= 0) kv.set("run", "seed", std::to_string(flags.seed));
  if (flags.optimize_every > 0)
    kv.set("run", "optimize_every", std::to_string(flags.optimize_every));
  if (!flags.scheme.empty()) kv.set("run", "scheme", flags.scheme);
  return kv;
}

struct PreparedRun {
  RunConfig cfg;
  TopologyGraph graph;
  std::unique_ptr<Task> task;
};

PreparedRun prepare(const KeyValueConfig& kv) {
  PreparedRun pr;
  pr.cfg = run_config_from_kv(kv);
  pr.graph = build_topology(pr.cfg);
  pr.task = build_task(pr.cfg);
  finalize_options(pr.cfg, *pr.task);
  return pr;
}

void attach_logging(TrainOptions& opt, const std::string& level) {
  if (level == "quiet") return;
  opt.on_round = [level](const RoundMetrics& m) {
    std::printf("round %4d  avg_loss=%.6g  min_loss=%.6g  nmse_db=%.2f  "
                "agree=%.3g  delta=%.4f%s\n",
                m.round, m.avg_loss, m.min_loss, m.nmse_db, m.agreement_error,
                m.delta_w, m.optimization_flagged ? "  [flagged]" : "");
    if (level == "debug")
      std::printf("        grad_norm_sq=%.6g fro_expect=%.6g ones_expect=%.6g\n",
                  m.global_grad_norm_sq, m.fro_err_expect, m.ones_err_expect);
  };
}

int run_one(const KeyValueConfig& kv, const CommonFlags& flags) {
  PreparedRun pr = prepare(kv);
  TrainOptions& opt = pr.cfg.train;
  opt.dump_channels = flags.dump_channels;
  opt.replay_channels = flags.replay_channels;
  opt.dump_frames = flags.dump_frames;
  attach_logging(opt, flags.log_level);

  fs::create_directories(flags.out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const RunRecord rec = run_training(pr.graph, *pr.task, opt);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  write_metrics_csv(rec.metrics, flags.out_dir + "/metrics.csv");
  save_topology(pr.graph, flags.out_dir + "/topology.txt");
  save_mixing_csv(rec.final_mixing, flags.out_dir + "/mixing.csv",
                  flags.out_dir + "/topology.txt");
  if (opt.scheme != Scheme::error_free) {
    save_beamformers(rec.final_beams, flags.out_dir + "/beamformers.csv");
    write_manifest(flags.out_dir + "/beamformers.manifest.json",
                   opt.dump_channels.empty() ? std::string("<in-memory>")
                                             : opt.dump_channels,
                   scheme_name(opt.scheme), opt.seed, 0.0);
  }
  write_manifest(flags.out_dir + "/manifest.json", kv.canonical(),
                 scheme_name(opt.scheme), opt.seed, wall,
                 {{"flagged_rounds", static_cast<double>(rec.flagged_rounds)},
                  {"final_delta_w", rec.final_delta_w}});
  if (rec.flagged_rounds > 0) {
    std::fprintf(stderr, "%d round(s) fell back to the previous design\n",
                 rec.flagged_rounds);
    return 2;
  }
  return 0;
}

struct CellSummary {
  double axis_value = 0.0;
  std::string scheme;
  std::vector<double> final_avg_loss, final_min_loss, mean_nmse;
};

void write_cell_stats(std::ofstream& out, const CellSummary& cell,
                      const std::string& axis) {
  auto stats = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double se =
        v.size() > 1 ? std::sqrt(var / (v.size() - 1.0) / v.size()) : 0.0;
    return std::pair<double, double>(mean, se);
  };
  const auto [la, sa] = stats(cell.final_avg_loss);
  const auto [lm, sm] = stats(cell.final_min_loss);
  const auto [nm, sn] = stats(cell.mean_nmse);
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%s,%.17g,%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                axis.c_str(), cell.axis_value, cell.scheme.c_str(),
                cell.final_avg_loss.size(), la, sa, lm, sm, nm, sn);
  out << buf;
}

void apply_axis(KeyValueConfig& kv, const std::string& axis, double value) {
  if (axis == "snr_db") {
    kv.set("run", "snr_db", std::to_string(value));
  } else if (axis == "antennas") {
    kv.set("run", "n_tx", std::to_string(static_cast<int>(value)));
    kv.set("run", "n_rx", std::to_string(static_cast<int>(value)));
  } else if (axis == "devices") {
    kv.set("run", "devices", std::to_string(static_cast<int>(value)));
  } else if (axis == "sparsity") {
    kv.set("topology", "sparsity", std::to_string(value));
  } else {
    throw ConfigError("unknown sweep axis '" + axis +
                      "' (snr_db|antennas|devices|sparsity)");
  }
}

double mean_nmse_of(const RunRecord& rec) {
  double acc = 0.0;
  for (const auto& m : rec.metrics) acc += m.nmse_db;
  return rec.metrics.empty() ? 0.0 : acc / rec.metrics.size();
}

int cmd_sweep(const CommonFlags& flags) {
  const KeyValueConfig base = load_merged(flags);
  const RunConfig probe = run_config_from_kv(base);
  if (probe.sweep_axis.empty() || probe.sweep_values.empty())
    throw ConfigError("sweep needs [sweep] axis and values");
  std::vector<std::uint64_t> seeds = probe.sweep_seeds;
  if (seeds.empty()) seeds = {probe.train.seed};
  std::vector<std::string> schemes = probe.sweep_schemes;
  if (schemes.empty()) schemes = {scheme_name(probe.train.scheme)};

  fs::create_directories(flags.out_dir);
  std::ofstream agg(flags.out_dir + "/sweep.csv");
  agg << "axis,value,scheme,seeds,final_avg_loss_mean,final_avg_loss_stderr,"
         "final_min_loss_mean,final_min_loss_stderr,nmse_db_mean,"
         "nmse_db_stderr\n";

  for (double value : probe.sweep_values) {
    std::map<std::string, CellSummary> cells;
    for (std::uint64_t seed : seeds) {
      for (const std::string& scheme : schemes) {
        KeyValueConfig kv = base;
        apply_axis(kv, probe.sweep_axis, value);
        kv.set("run", "seed", std::to_string(seed));
        kv.set("run", "scheme", scheme);
        PreparedRun pr = prepare(kv);
        char cell_name[160];
        std::snprintf(cell_name, sizeof(cell_name), "%s_%g_seed%llu_%s",
                      probe.sweep_axis.c_str(), value,
                      static_cast<unsigned long long>(seed), scheme.c_str());
        const std::string cell_dir = flags.out_dir + "/cells/" + cell_name;
        fs::create_directories(cell_dir);
        TrainOptions& opt = pr.cfg.train;
        if (!flags.dump_channels.empty())
          opt.dump_channels = cell_dir + "/channels.bin";
        const RunRecord rec = run_training(pr.graph, *pr.task, opt);
        write_metrics_csv(rec.metrics, cell_dir + "/metrics.csv");
        auto& cell = cells[scheme];
        cell.axis_value = value;
        cell.scheme = scheme;
        cell.final_avg_loss.push_back(rec.metrics.back().avg_loss);
        cell.final_min_loss.push_back(rec.metrics.back().min_loss);
        cell.mean_nmse.push_back(mean_nmse_of(rec));
      }
    }
    for (const auto& [name, cell] : cells)
      write_cell_stats(agg, cell, probe.sweep_axis);
  }
  std::printf("sweep written to %s/sweep.csv\n", flags.out_dir.c_str());
  return 0;
}

int cmd_compare(const CommonFlags& flags, std::vector<std::string> schemes) {
  const KeyValueConfig base = load_merged(flags);
  const RunConfig probe = run_config_from_kv(base);
  if (schemes.empty()) schemes = probe.sweep_schemes;
  if (schemes.size() < 2)
    throw ConfigError("compare needs at least two schemes (--schemes a,b)");
  for (const auto& s : schemes)
    if (!parse_scheme(s)) throw ConfigError("unknown scheme id '" + s + "'");
  std::vector<std::uint64_t> seeds = probe.sweep_seeds;
  if (seeds.empty()) seeds = {probe.train.seed};

  fs::create_directories(flags.out_dir);
  std::map<std::string, std::vector<RoundMetrics>> mean_metrics;
  for (const std::string& scheme : schemes) {
    std::vector<RoundMetrics> acc;
    for (std::uint64_t seed : seeds) {
      KeyValueConfig kv = base;
      kv.set("run", "seed", std::to_string(seed));
      kv.set("run", "scheme", scheme);
      PreparedRun pr = prepare(kv);
      const RunRecord rec = run_training(pr.graph, *pr.task, pr.cfg.train);
      char name[96];
      std::snprintf(name, sizeof(name), "%s_seed%llu", scheme.c_str(),
                    static_cast<unsigned long long>(seed));
      write_metrics_csv(rec.metrics,
                        flags.out_dir + "/" + name + "_metrics.csv");
      if (acc.empty()) {
        acc = rec.metrics;
      } else {
        for (std::size_t k = 0; k < acc.size(); ++k) {
          acc[k].avg_loss += rec.metrics[k].avg_loss;
          acc[k].min_loss += rec.metrics[k].min_loss;
          acc[k].nmse_db += rec.metrics[k].nmse_db;
        }
      }
    }
    for (auto& m : acc) {
      m.avg_loss /= static_cast<double>(seeds.size());
      m.min_loss /= static_cast<double>(seeds.size());
      m.nmse_db /= static_cast<double>(seeds.size());
    }
    mean_metrics[scheme] = std::move(acc);
  }

  std::ofstream out(flags.out_dir + "/compare.csv");
  out << "round";
  for (const auto& s : schemes)
    out << "," << s << "_avg_loss," << s << "_min_loss," << s << "_nmse_db";
  out << "\n";
  const std::size_t rounds = mean_metrics[schemes.front()].size();
  char buf[64];
  for (std::size_t t = 0; t < rounds; ++t) {
    out << t;
    for (const auto& s : schemes) {
      const auto& m = mean_metrics[s][t];
      std::snprintf(buf, sizeof(buf), ",%.17g", m.avg_loss);
      out << buf;
      std::snprintf(buf, sizeof(buf), ",%.17g", m.min_loss);
      out << buf;
      std::snprintf(buf, sizeof(buf), ",%.17g", m.nmse_db);
      out << buf;
    }
    out << "\n";
  }
  std::printf("comparison written to %s/compare.csv\n", flags.out_dir.c_str());
  return 0;
}

int cmd_selftest(long draws, std::uint64_t seed) {
  // Monte Carlo validation of the closed-form error expectations on small
  // random instances; the acceptance suite runs the full-scale version.
  int failures = 0;
  for (int k = 0; k < 5; ++k) {
    const std::uint64_t s = seed + 100 * static_cast<std::uint64_t>(k);
    const int m = 3 + k % 4;
    const auto g = generate_random(m, 0.25, s);
    const auto w = random_feasible_mixing(g, s + 1);
    const auto chans = sample_round(g, {10.0, 1.0}, 2, 2, s + 2);
    auto rng = make_rng(s, "selftest");
    Gaussian gauss;
    BeamformerSet beams;
    beams.transmit.resize(m);
    beams.receive.resize(m);
    for (int i = 0; i < m; ++i) {
      CMat u(2, 1), f(2, 1);
      fill_complex_gaussian(u, rng);
      fill_complex_gaussian(f, rng);
      beams.transmit[i] = std::sqrt(0.5 / u.col(0).squaredNorm()) * u.col(0);
      beams.receive[i] = f.col(0);
    }
    Vec scales(m);
    for (int i = 0; i < m; ++i) scales[i] = 0.5 + std::abs(gauss(rng));
    const int block = 32;

    const double fro_cf =
        expected_error_fro(w.entries, beams, chans, scales, block);
    const double ones_cf =
        expected_error_ones(w.entries, beams, chans, scales, block);

    const CMat gains = effective_gains(beams, chans);
    double fro_acc = 0.0, ones_acc = 0.0, fro_sq = 0.0, ones_sq = 0.0;
    for (long rep = 0; rep < draws; ++rep) {
      CMat r(block, m), err(block, m);
      fill_complex_gaussian(r, rng, 2.0);
      err.setZero();
      for (int p = 0; p < m; ++p)
        for (int i : chans.neighbors[p])
          err.col(i) += (w.entries(i, p) * scales[p] - gains(i, p)) * r.col(p);
      for (int i = 0; i < m; ++i) {
        CMat n(block, 1);
        fill_complex_gaussian(
            n, rng, chans.noise_variance * beams.receive[i].squaredNorm());
        err.col(i) -= n.col(0);
      }
      const double fro = err.squaredNorm();
      const double ones = err.rowwise().sum().squaredNorm();
      fro_acc += fro;
      fro_sq += fro * fro;
      ones_acc += ones;
      ones_sq += ones * ones;
    }
    const double n = static_cast<double>(draws);
    const double fro_mean = fro_acc / n, ones_mean = ones_acc / n;
    const double fro_se =
        std::sqrt(std::max(0.0, fro_sq / n - fro_mean * fro_mean) / n);
    const double ones_se =
        std::sqrt(std::max(0.0, ones_sq / n - ones_mean * ones_mean) / n);
    const bool ok_f = std::abs(fro_cf - fro_mean) <= 3.0 * fro_se;
    const bool ok_o = std::abs(ones_cf - ones_mean) <= 3.0 * ones_se;
    std::printf("[%s] instance %d (M=%d): fro cf=%.5g mc=%.5g (se %.3g); "
                "ones cf=%.5g mc=%.5g (se %.3g)\n",
                ok_f && ok_o ? "PASS" : "FAIL", k, m, fro_cf, fro_mean, fro_se,
                ones_cf, ones_mean, ones_se);
    if (!ok_f || !ok_o) ++failures;
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized federated learning over MIMO analog aggregation: "
               "simulator and joint transceiver/mixing-matrix designer"};
  app.require_subcommand(1);

  CommonFlags run_flags, sweep_flags, compare_flags;
  std::vector<std::string> compare_schemes;

  auto* run_cmd = app.add_subcommand("run", "execute one training run");
  add_common(run_cmd, run_flags);

  auto* sweep_cmd =
      app.add_subcommand("sweep", "run a parameter sweep from [sweep] config");
  add_common(sweep_cmd, sweep_flags);

  auto* compare_cmd = app.add_subcommand(
      "compare", "run several schemes on shared seeds and channels");
  add_common(compare_cmd, compare_flags);
  compare_cmd->add_option("--schemes", compare_schemes,
                          "comma-separated scheme ids")
      ->delimiter(',');

  int gt_devices = 10;
  double gt_sparsity = 0.3;
  long gt_seed = 1;
  std::string gt_kind = "random", gt_out = "topology.txt";
  auto* gt_cmd =
      app.add_subcommand("gen-topology", "generate a topology edge-list file");
  gt_cmd->add_option("--devices", gt_devices, "device count")->required();
  gt_cmd->add_option("--kind", gt_kind, "complete|ring|line|star|random");
  gt_cmd->add_option(
      "--sparsity", gt_sparsity,
      "fraction of absent off-diagonal unordered pairs (random kind only; "
      "rounded to the nearest realizable pair count)");
  gt_cmd->add_option("--seed", gt_seed, "rng seed");
  gt_cmd->add_option("--out", gt_out, "output path");

  double eb_delta = 0.0, eb_omega = 0.1, eb_lambda = 0.02, eb_alpha = 0.0,
         eb_beta = 0.0, eb_fstar = 0.0, eb_f0 = 1.0, eb_fro = 0.0,
         eb_ones = 0.0;
  int eb_devices = 30, eb_rounds = 150;
  auto* eb_cmd = app.add_subcommand(
      "eval-bound", "evaluate the convergence bound for supplied parameters");
  eb_cmd->add_option("--delta", eb_delta, "spectral statistic of W");
  eb_cmd->add_option("--omega", eb_omega, "smoothness estimate");
  eb_cmd->add_option("--lambda", eb_lambda, "learning rate");
  eb_cmd->add_option("--alpha-sq", eb_alpha, "gradient noise bound");
  eb_cmd->add_option("--beta-sq", eb_beta, "heterogeneity bound");
  eb_cmd->add_option("--f-star", eb_fstar, "loss lower bound");
  eb_cmd->add_option("--f0", eb_f0, "initial loss");
  eb_cmd->add_option("--devices", eb_devices, "M");
  eb_cmd->add_option("--rounds", eb_rounds, "T");
  eb_cmd->add_option("--fro", eb_fro, "average E||E||_F^2 per round");
  eb_cmd->add_option("--ones", eb_ones, "average E||E*1||^2 per round");

  long st_draws = 20000;
  long st_seed = 1;
  auto* st_cmd = app.add_subcommand(
      "selftest", "Monte Carlo validation of the closed-form error model");
  st_cmd->add_option("--draws", st_draws, "draws per instance");
  st_cmd->add_option("--seed", st_seed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return run_one(load_merged(run_flags), run_flags);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_flags);
    if (compare_cmd->parsed())
      return cmd_compare(compare_flags, compare_schemes);
    if (gt_cmd->parsed()) {
      TopologyGraph g;
      if (gt_kind == "random")
        g = generate_random(gt_devices, gt_sparsity,
                            static_cast<std::uint64_t>(gt_seed));
      else if (gt_kind == "complete")
        g = generate_named(NamedTopology::complete, gt_devices);
      else if (gt_kind == "ring")
        g = generate_named(NamedTopology::ring, gt_devices);
      else if (gt_kind == "line")
        g = generate_named(NamedTopology::line, gt_devices);
      else if (gt_kind == "star")
        g = generate_named(NamedTopology::star, gt_devices);
      else
        throw ConfigError("unknown topology kind '" + gt_kind + "'");
      save_topology(g, gt_out);
      std::printf("wrote %s (M=%d)\n", gt_out.c_str(), g.num_devices);
      return 0;
    }
    if (eb_cmd->parsed()) {
      ConvergenceParams p;
      p.omega = eb_omega;
      p.lambda = eb_lambda;
      p.alpha_sq = eb_alpha;
      p.beta_sq = eb_beta;
      p.f_star = eb_fstar;
      p.num_devices = eb_devices;
      p.rounds = eb_rounds;
      std::vector<ErrorStats> errs;
      if (eb_fro > 0.0 || eb_ones > 0.0) errs.push_back({eb_fro, eb_ones});
      const double rhs = bound_rhs(p, eb_delta, errs, eb_f0);
      std::printf("G(delta)=%.9g\nbound_rhs=%.9g\n", g_factor(eb_delta, p),
                  rhs);
      return 0;
    }
    if (st_cmd->parsed())
      return cmd_selftest(st_draws, static_cast<std::uint64_t>(st_seed));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
