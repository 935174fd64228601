#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "oadfl/beamformers.hpp"
#include "oadfl/channel.hpp"
#include "oadfl/common.hpp"
#include "oadfl/mixing.hpp"

namespace oadfl {

// Bookkeeping for inverting the normalization step. `scale` is the standard
// deviation of the original vector; it is also the alignment target the
// beamformers aim at (f^H H u = w * scale inverts the chain exactly).
// Degenerate (constant) vectors carry scale 0: they transmit a zero frame and
// are reconstructed from the mean alone.
struct NormalizationRecord {
  double mean = 0.0;
  double scale = 1.0;
  int dim = 0;
  bool padded = false;
  bool degenerate = false;
};

struct ComplexFrame {
  CVec symbols;  // length ceil(dim/2)
};

namespace detail {
inline double degenerate_threshold(const Vec& x) {
  const double mag = x.size() ? x.cwiseAbs().maxCoeff() : 0.0;
  const double eps = 1e-12 * (mag + 1.0);
  return eps * eps;
}
}  // namespace detail

// Zero-mean unit-variance normalization. Throws on (numerically) constant
// input; the aggregation chain handles that case via the degenerate fallback
// below.
inline std::pair<Vec, NormalizationRecord> normalize(const Vec& x) {
  const int d = static_cast<int>(x.size());
  if (d == 0) throw ShapeError("cannot normalize an empty vector");
  NormalizationRecord rec;
  rec.dim = d;
  rec.mean = x.mean();
  const double var = (x.array() - rec.mean).square().sum() / d;
  if (var <= detail::degenerate_threshold(x))
    throw DegenerateInput("constant vector has no variance to normalize");
  rec.scale = std::sqrt(var);
  Vec out = (x.array() - rec.mean) / rec.scale;
  return {std::move(out), rec};
}

inline std::pair<Vec, NormalizationRecord> normalize_or_degenerate(const Vec& x) {
  try {
    return normalize(x);
  } catch (const DegenerateInput&) {
    NormalizationRecord rec;
    rec.dim = static_cast<int>(x.size());
    rec.mean = x.size() ? x.mean() : 0.0;
    rec.scale = 0.0;
    rec.degenerate = true;
    return {Vec::Zero(x.size()), rec};
  }
}

// First half of the vector becomes the real parts, second half the imaginary
// parts. Requires even length; odd vectors are zero-padded by the chain.
inline ComplexFrame pack_complex(const Vec& x_tilde) {
  const Eigen::Index d = x_tilde.size();
  if (d % 2 != 0)
    throw ShapeError("pack_complex needs an even-length vector; pad first");
  const Eigen::Index l = d / 2;
  ComplexFrame frame;
  frame.symbols.resize(l);
  for (Eigen::Index k = 0; k < l; ++k)
    frame.symbols[k] = Complex(x_tilde[k], x_tilde[k + l]);
  return frame;
}

inline Vec unpack_complex(const ComplexFrame& frame) {
  const Eigen::Index l = frame.symbols.size();
  Vec out(2 * l);
  for (Eigen::Index k = 0; k < l; ++k) {
    out[k] = frame.symbols[k].real();
    out[k + l] = frame.symbols[k].imag();
  }
  return out;
}

// Rank-one transmit matrix S = u * r^T with per-use power 2*||u||^2.
inline CMat make_transmit(const ComplexFrame& frame, const CVec& u, double p0) {
  if (2.0 * u.squaredNorm() > p0 + 1e-8 * std::max(1.0, p0))
    throw PowerViolation("transmit beamformer exceeds the power budget");
  return u * frame.symbols.transpose();
}

// Combine, unpack, and undo the normalization: x_hat = [Re; Im](f^H Y)
// + mean-compensation + w_ii * own model. `w_row` is row i of the mixing
// matrix and `recs` the per-device normalization records for this round.
inline Vec receive_and_recover(const CMat& y, const CVec& f, const Vec& w_row,
                               const std::vector<int>& neighbors,
                               const std::vector<NormalizationRecord>& recs,
                               const Vec& x_self, double w_ii) {
  const int d = static_cast<int>(x_self.size());
  const Eigen::Index l = (d % 2 == 0) ? d / 2 : (d + 1) / 2;
  if (y.cols() != l || y.rows() != f.size())
    throw ShapeError("received matrix shape does not match combiner/model");
  ComplexFrame combined;
  combined.symbols = (f.adjoint() * y).transpose();
  Vec stacked = unpack_complex(combined);
  double mean_comp = 0.0;
  for (int j : neighbors) mean_comp += w_row[j] * recs[static_cast<std::size_t>(j)].mean;
  Vec out = stacked.head(d);
  out.array() += mean_comp;
  out += w_ii * x_self;
  return out;
}

// Error-free gossip aggregation, column i of the result = sum_j w_ij x_j.
inline Mat ideal_aggregate(const Mat& x, const MixingMatrix& w) {
  if (x.cols() != w.entries.rows())
    throw ShapeError("model matrix and mixing matrix disagree on device count");
  return x * w.entries;
}

// Per-column normalization of the model matrix, zero-padded to even length.
// Returns the normalized (padded) matrix and one record per device.
inline std::pair<Mat, std::vector<NormalizationRecord>> compute_normalization(
    const Mat& x) {
  const int d = static_cast<int>(x.rows());
  const int m = static_cast<int>(x.cols());
  const int padded = (d % 2 == 0) ? d : d + 1;
  Mat xt = Mat::Zero(padded, m);
  std::vector<NormalizationRecord> recs(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    auto [col, rec] = normalize_or_degenerate(x.col(j));
    rec.padded = (padded != d);
    xt.col(j).head(d) = col;
    recs[static_cast<std::size_t>(j)] = rec;
  }
  return {std::move(xt), std::move(recs)};
}

// One full over-the-air aggregation round for all devices: normalize, pack,
// beamform, superpose through the channel with noise, combine, recover.
// Mean/variance records travel on the error-free side channel (in memory).
inline Mat aggregate_over_the_air(const Mat& x, const MixingMatrix& w,
                                  const BeamformerSet& beams,
                                  const ChannelSet& chans, double p0,
                                  std::uint64_t noise_seed,
                                  std::vector<NormalizationRecord>* recs_out = nullptr,
                                  std::vector<ComplexFrame>* frames_out = nullptr) {
  const int m = chans.num_devices;
  if (x.cols() != m) throw ShapeError("model matrix has wrong device count");
  auto [xt, recs] = compute_normalization(x);
  std::vector<CMat> signals(static_cast<std::size_t>(m));
  if (frames_out) frames_out->clear();
  for (int j = 0; j < m; ++j) {
    ComplexFrame frame = pack_complex(xt.col(j));
    signals[static_cast<std::size_t>(j)] =
        make_transmit(frame, beams.transmit[static_cast<std::size_t>(j)], p0);
    if (frames_out) frames_out->push_back(std::move(frame));
  }
  Mat x_hat(x.rows(), m);
  for (int i = 0; i < m; ++i) {
    const CMat y = transmit(chans, signals, i, noise_seed);
    x_hat.col(i) = receive_and_recover(
        y, beams.receive[static_cast<std::size_t>(i)], w.entries.row(i),
        chans.neighbors[static_cast<std::size_t>(i)], recs, x.col(i),
        w.entries(i, i));
  }
  if (recs_out) *recs_out = std::move(recs);
  return x_hat;
}

inline Vec normalization_scales(const std::vector<NormalizationRecord>& recs) {
  Vec v(static_cast<Eigen::Index>(recs.size()));
  for (std::size_t i = 0; i < recs.size(); ++i) v[static_cast<Eigen::Index>(i)] = recs[i].scale;
  return v;
}

// Debug dump of the per-round complex frames, same binary conventions as the
// channel dump: magic + dims header, then row-major interleaved re/im
// doubles (one length-L vector per device per round).
class FrameDumpWriter {
 public:
  FrameDumpWriter(const std::string& path, int num_devices, int block_len)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open " + path);
    out_.write("OADFLFR1", 8);
    const std::uint32_t m = static_cast<std::uint32_t>(num_devices);
    const std::uint32_t l = static_cast<std::uint32_t>(block_len);
    out_.write(reinterpret_cast<const char*>(&m), 4);
    out_.write(reinterpret_cast<const char*>(&l), 4);
  }

  void append(const std::vector<ComplexFrame>& frames) {
    for (const auto& fr : frames)
      for (Eigen::Index k = 0; k < fr.symbols.size(); ++k) {
        const double re = fr.symbols[k].real(), im = fr.symbols[k].imag();
        out_.write(reinterpret_cast<const char*>(&re), 8);
        out_.write(reinterpret_cast<const char*>(&im), 8);
      }
  }

 private:
  std::ofstream out_;
};

}  // namespace oadfl
