#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oadfl/common.hpp"
#include "oadfl/rng.hpp"
#include "oadfl/topology.hpp"

namespace oadfl {

struct ChannelConfig {
  double snr_db = 20.0;  // transmitter SNR, p0 / noise_variance
  double p0 = 1.0;       // max transmit power per device, watts
};

inline double noise_variance_from_snr(const ChannelConfig& cfg) {
  if (cfg.p0 <= 0.0) throw InvalidHyperparameters("p0 must be positive");
  return cfg.p0 / std::pow(10.0, cfg.snr_db / 10.0);
}

// Block-fading channel draw for one communication round: one complex
// n_rx x n_tx matrix per ordered edge (receiver, transmitter). The two
// directions of a link are independent draws (full duplex, two physical
// paths).
struct ChannelSet {
  int num_devices = 0;
  int n_tx = 0;
  int n_rx = 0;
  double noise_variance = 0.0;
  std::vector<CMat> mats;                   // index rx * M + tx; empty if no edge
  std::vector<std::vector<int>> neighbors;  // ascending, excludes self

  bool has_edge(int rx, int tx) const {
    return rx != tx &&
           mats[static_cast<std::size_t>(rx) * num_devices + tx].size() > 0;
  }
  const CMat& h(int rx, int tx) const {
    const CMat& m = mats[static_cast<std::size_t>(rx) * num_devices + tx];
    if (m.size() == 0) throw ShapeError("no channel for that edge");
    return m;
  }
};

inline ChannelSet sample_round(const TopologyGraph& g, const ChannelConfig& cfg,
                               int n_tx, int n_rx, std::uint64_t seed) {
  if (n_tx < 1 || n_rx < 1)
    throw InvalidHyperparameters("antenna counts must be positive");
  const int m = g.num_devices;
  ChannelSet cs;
  cs.num_devices = m;
  cs.n_tx = n_tx;
  cs.n_rx = n_rx;
  cs.noise_variance = noise_variance_from_snr(cfg);
  cs.mats.resize(static_cast<std::size_t>(m) * m);
  cs.neighbors.resize(m);
  auto rng = make_rng(seed, "channels");
  for (int i = 0; i < m; ++i) {
    cs.neighbors[i] = neighbor_set(g, i);
    for (int j : cs.neighbors[i]) {
      CMat h(n_rx, n_tx);
      fill_complex_gaussian(h, rng, 1.0);
      cs.mats[static_cast<std::size_t>(i) * m + j] = std::move(h);
    }
  }
  return cs;
}

// Received matrix of one device: sum of neighbor transmissions through their
// channels plus AWGN with noise_variance per complex entry.
inline CMat transmit(const ChannelSet& cs, const std::vector<CMat>& signals,
                     int receiver, std::uint64_t seed) {
  if (receiver < 0 || receiver >= cs.num_devices)
    throw std::out_of_range("receiver index out of range");
  Eigen::Index block = -1;
  for (int j : cs.neighbors[receiver]) {
    const CMat& s = signals[static_cast<std::size_t>(j)];
    if (s.rows() != cs.n_tx)
      throw ShapeError("signal row count does not match n_tx");
    if (block < 0)
      block = s.cols();
    else if (s.cols() != block)
      throw ShapeError("neighbor signals disagree on block length");
  }
  if (block < 0) block = 0;
  CMat y = CMat::Zero(cs.n_rx, block);
  for (int j : cs.neighbors[receiver])
    y.noalias() += cs.h(receiver, j) * signals[static_cast<std::size_t>(j)];
  if (cs.noise_variance > 0.0 && block > 0) {
    CMat n(cs.n_rx, block);
    auto rng = make_rng(seed, "noise", static_cast<std::uint64_t>(receiver));
    fill_complex_gaussian(n, rng, cs.noise_variance);
    y += n;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Channel dump: binary record of every sampled round so that different
// schemes can replay bit-identical fading realizations.
// Layout: magic, M, N_T, N_R, L, noise_variance, edge list; then per round
// the edge matrices as row-major interleaved re/im doubles.
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kChannelDumpMagic[8] = {'O', 'A', 'D', 'F', 'L', 'C', 'H', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
bool read_pod(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<bool>(in);
}
}  // namespace detail

class ChannelDumpWriter {
 public:
  ChannelDumpWriter(const std::string& path, int block_len)
      : path_(path), block_len_(block_len) {}

  void append(const ChannelSet& cs) {
    if (!out_.is_open()) open_and_write_header(cs);
    for (const auto& [i, j] : edges_) {
      const CMat& h = cs.h(i, j);
      for (Eigen::Index r = 0; r < h.rows(); ++r)
        for (Eigen::Index c = 0; c < h.cols(); ++c) {
          detail::write_pod(out_, h(r, c).real());
          detail::write_pod(out_, h(r, c).imag());
        }
    }
  }

 private:
  void open_and_write_header(const ChannelSet& cs) {
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open " + path_);
    out_.write(detail::kChannelDumpMagic, 8);
    detail::write_pod(out_, static_cast<std::uint32_t>(cs.num_devices));
    detail::write_pod(out_, static_cast<std::uint32_t>(cs.n_tx));
    detail::write_pod(out_, static_cast<std::uint32_t>(cs.n_rx));
    detail::write_pod(out_, static_cast<std::uint32_t>(block_len_));
    detail::write_pod(out_, cs.noise_variance);
    for (int i = 0; i < cs.num_devices; ++i)
      for (int j : cs.neighbors[i]) edges_.emplace_back(i, j);
    detail::write_pod(out_, static_cast<std::uint32_t>(edges_.size()));
    for (const auto& [i, j] : edges_) {
      detail::write_pod(out_, static_cast<std::uint32_t>(i));
      detail::write_pod(out_, static_cast<std::uint32_t>(j));
    }
  }

  std::string path_;
  int block_len_;
  std::ofstream out_;
  std::vector<std::pair<int, int>> edges_;
};

class ChannelDumpReader {
 public:
  explicit ChannelDumpReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in_.read(magic, 8);
    if (!in_ || !std::equal(magic, magic + 8, detail::kChannelDumpMagic))
      throw std::runtime_error(path + ": not a channel dump");
    std::uint32_t m, ntx, nrx, l, ne;
    detail::read_pod(in_, m);
    detail::read_pod(in_, ntx);
    detail::read_pod(in_, nrx);
    detail::read_pod(in_, l);
    detail::read_pod(in_, noise_variance_);
    detail::read_pod(in_, ne);
    num_devices_ = static_cast<int>(m);
    n_tx_ = static_cast<int>(ntx);
    n_rx_ = static_cast<int>(nrx);
    block_len_ = static_cast<int>(l);
    for (std::uint32_t k = 0; k < ne; ++k) {
      std::uint32_t i, j;
      detail::read_pod(in_, i);
      detail::read_pod(in_, j);
      edges_.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
  }

  int num_devices() const { return num_devices_; }
  int n_tx() const { return n_tx_; }
  int n_rx() const { return n_rx_; }
  int block_len() const { return block_len_; }

  std::optional<ChannelSet> read_round() {
    ChannelSet cs;
    cs.num_devices = num_devices_;
    cs.n_tx = n_tx_;
    cs.n_rx = n_rx_;
    cs.noise_variance = noise_variance_;
    cs.mats.resize(static_cast<std::size_t>(num_devices_) * num_devices_);
    cs.neighbors.resize(num_devices_);
    for (const auto& [i, j] : edges_) {
      CMat h(n_rx_, n_tx_);
      for (Eigen::Index r = 0; r < h.rows(); ++r)
        for (Eigen::Index c = 0; c < h.cols(); ++c) {
          double re, im;
          if (!detail::read_pod(in_, re) || !detail::read_pod(in_, im))
            return std::nullopt;
          h(r, c) = Complex(re, im);
        }
      cs.mats[static_cast<std::size_t>(i) * num_devices_ + j] = std::move(h);
      cs.neighbors[i].push_back(j);
    }
    for (auto& nb : cs.neighbors) std::sort(nb.begin(), nb.end());
    return cs;
  }

 private:
  std::ifstream in_;
  int num_devices_ = 0, n_tx_ = 0, n_rx_ = 0, block_len_ = 0;
  double noise_variance_ = 0.0;
  std::vector<std::pair<int, int>> edges_;
};

}  // namespace oadfl
