#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oadfl/common.hpp"
#include "oadfl/rng.hpp"

namespace oadfl {

// A distributed learning problem: one dataset shard per device, with loss and
// gradient evaluators. Stochastic gradients draw minibatches by seed so runs
// replay exactly.
class Task {
 public:
  virtual ~Task() = default;
  virtual int dim() const = 0;
  virtual int num_devices() const = 0;
  virtual double device_loss(const Vec& x, int device) const = 0;
  virtual Vec device_gradient(const Vec& x, int device) const = 0;
  virtual Vec stochastic_gradient(const Vec& x, int device,
                                  std::uint64_t seed) const = 0;
  virtual double smoothness() const = 0;
  virtual std::optional<double> optimum_value() const { return std::nullopt; }

  double global_loss(const Vec& x) const {
    double acc = 0.0;
    for (int i = 0; i < num_devices(); ++i) acc += device_loss(x, i);
    return acc / num_devices();
  }
  Vec global_gradient(const Vec& x) const {
    Vec g = Vec::Zero(dim());
    for (int i = 0; i < num_devices(); ++i) g += device_gradient(x, i);
    return g / num_devices();
  }
};

namespace detail {
inline std::vector<int> sample_batch(int dataset_size, int batch_size,
                                     std::mt19937_64& rng) {
  std::vector<int> idx(static_cast<std::size_t>(batch_size));
  std::uniform_int_distribution<int> pick(0, dataset_size - 1);
  for (auto& k : idx) k = pick(rng);
  return idx;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Heterogeneous quadratic least squares. Device i holds (A_i, b_i) with
// f_i(x) = ||A_i x - b_i||^2 / (2 n). Labels are generated against a
// device-specific ground truth that interpolates between a common model and a
// per-device skewed one, so the heterogeneity level is tunable and the global
// optimum stays available in closed form.
// ---------------------------------------------------------------------------

struct QuadraticTaskConfig {
  int num_devices = 10;
  int dim = 32;
  int samples_per_device = 64;
  int batch_size = 0;            // 0 = full batch
  double heterogeneity = 0.5;    // 0 = identical ground truths
  double curvature_spread = 0.3; // relative spread of device curvatures
  double label_noise = 0.1;
  double target_smoothness = 1.0;  // the generator rescales to hit this omega
  std::uint64_t seed = 1;
};

class QuadraticTask : public Task {
 public:
  explicit QuadraticTask(const QuadraticTaskConfig& cfg) : cfg_(cfg) {
    const int m = cfg.num_devices, d = cfg.dim, n = cfg.samples_per_device;
    auto rng = make_rng(cfg.seed, "quadratic-data");
    Gaussian gauss;
    Vec common_truth = gaussian_vector(d, rng);
    a_.resize(m);
    b_.resize(m);
    double omega_raw = 0.0;
    for (int i = 0; i < m; ++i) {
      Vec truth = common_truth;
      if (cfg.heterogeneity > 0.0)
        truth += cfg.heterogeneity * gaussian_vector(d, rng);
      const double curve =
          m > 1 ? 1.0 + cfg.curvature_spread * (2.0 * i / (m - 1.0) - 1.0)
                : 1.0;
      Mat a(n, d);
      fill_gaussian(a, rng);
      a *= curve / std::sqrt(static_cast<double>(d));
      Vec b = a * truth;
      for (int r = 0; r < n; ++r) b[r] += cfg.label_noise * gauss(rng);
      a_[static_cast<std::size_t>(i)] = std::move(a);
      b_[static_cast<std::size_t>(i)] = std::move(b);
    }
    for (int i = 0; i < m; ++i) {
      Eigen::SelfAdjointEigenSolver<Mat> es(hessian(i), Eigen::EigenvaluesOnly);
      omega_raw = std::max(omega_raw, es.eigenvalues().maxCoeff());
    }
    const double rescale = std::sqrt(cfg.target_smoothness / omega_raw);
    for (int i = 0; i < m; ++i) {
      a_[static_cast<std::size_t>(i)] *= rescale;
      b_[static_cast<std::size_t>(i)] *= rescale;
    }
    omega_ = 0.0;
    Mat h_sum = Mat::Zero(d, d);
    for (int i = 0; i < m; ++i) {
      const Mat h = hessian(i);
      Eigen::SelfAdjointEigenSolver<Mat> es(h, Eigen::EigenvaluesOnly);
      omega_ = std::max(omega_, es.eigenvalues().maxCoeff());
      h_sum += h;
    }
    h_sum /= m;
    Vec rhs = Vec::Zero(d);
    for (int i = 0; i < m; ++i)
      rhs += a_[static_cast<std::size_t>(i)].transpose() *
             b_[static_cast<std::size_t>(i)] /
             (m * static_cast<double>(cfg.samples_per_device));
    optimum_ = h_sum.ldlt().solve(rhs);
    f_star_ = global_loss(optimum_);
  }

  int dim() const override { return cfg_.dim; }
  int num_devices() const override { return cfg_.num_devices; }

  double device_loss(const Vec& x, int device) const override {
    const auto& a = a_[static_cast<std::size_t>(device)];
    const auto& b = b_[static_cast<std::size_t>(device)];
    return (a * x - b).squaredNorm() / (2.0 * a.rows());
  }

  Vec device_gradient(const Vec& x, int device) const override {
    const auto& a = a_[static_cast<std::size_t>(device)];
    const auto& b = b_[static_cast<std::size_t>(device)];
    return a.transpose() * (a * x - b) / static_cast<double>(a.rows());
  }

  Vec stochastic_gradient(const Vec& x, int device,
                          std::uint64_t seed) const override {
    const auto& a = a_[static_cast<std::size_t>(device)];
    const auto& b = b_[static_cast<std::size_t>(device)];
    const int n = static_cast<int>(a.rows());
    if (cfg_.batch_size <= 0 || cfg_.batch_size >= n)
      return device_gradient(x, device);
    auto rng = make_rng(seed, "batch", static_cast<std::uint64_t>(device));
    Vec g = Vec::Zero(cfg_.dim);
    for (int r : detail::sample_batch(n, cfg_.batch_size, rng))
      g += a.row(r).transpose() * (a.row(r).dot(x) - b[r]);
    return g / cfg_.batch_size;
  }

  double smoothness() const override { return omega_; }
  std::optional<double> optimum_value() const override { return f_star_; }
  const Vec& optimum_point() const { return optimum_; }

 private:
  Mat hessian(int i) const {
    const auto& a = a_[static_cast<std::size_t>(i)];
    return a.transpose() * a / static_cast<double>(a.rows());
  }

  QuadraticTaskConfig cfg_;
  std::vector<Mat> a_;
  std::vector<Vec> b_;
  double omega_ = 0.0;
  Vec optimum_;
  double f_star_ = 0.0;
};

// ---------------------------------------------------------------------------
// Binary logistic regression on synthetic Gaussian clusters with label-skewed
// device shards: devices are split into two groups, each group's shard drawn
// mostly from one class, interpolated with a balanced common pool.
// ---------------------------------------------------------------------------

struct LogisticTaskConfig {
  int num_devices = 10;
  int dim = 16;
  int samples_per_device = 64;
  int batch_size = 0;
  double heterogeneity = 0.8;  // fraction of shard drawn from the own class
  double cluster_distance = 2.0;
  double ridge = 1e-3;
  std::uint64_t seed = 1;
};

class LogisticTask : public Task {
 public:
  explicit LogisticTask(const LogisticTaskConfig& cfg) : cfg_(cfg) {
    const int m = cfg.num_devices, d = cfg.dim, n = cfg.samples_per_device;
    auto rng = make_rng(cfg.seed, "logistic-data");
    Gaussian gauss;
    Vec center = gaussian_vector(d, rng).normalized() * cfg.cluster_distance;
    a_.resize(m);
    y_.resize(m);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < m; ++i) {
      const int own_class = (i < m / 2) ? 1 : -1;
      Mat a(n, d);
      Vec y(n);
      for (int r = 0; r < n; ++r) {
        int label;
        if (unif(rng) < cfg.heterogeneity)
          label = own_class;
        else
          label = (unif(rng) < 0.5) ? 1 : -1;
        for (int c = 0; c < d; ++c)
          a(r, c) = label * center[c] + gauss(rng);
        y[r] = label;
      }
      a_[static_cast<std::size_t>(i)] = std::move(a);
      y_[static_cast<std::size_t>(i)] = std::move(y);
    }
    omega_ = 0.0;
    for (int i = 0; i < m; ++i) {
      const auto& a = a_[static_cast<std::size_t>(i)];
      Eigen::SelfAdjointEigenSolver<Mat> es(
          a.transpose() * a / (4.0 * a.rows()), Eigen::EigenvaluesOnly);
      omega_ = std::max(omega_, es.eigenvalues().maxCoeff() + cfg.ridge);
    }
  }

  int dim() const override { return cfg_.dim; }
  int num_devices() const override { return cfg_.num_devices; }

  double device_loss(const Vec& x, int device) const override {
    const auto& a = a_[static_cast<std::size_t>(device)];
    const auto& y = y_[static_cast<std::size_t>(device)];
    double acc = 0.0;
    for (int r = 0; r < a.rows(); ++r) {
      const double margin = y[r] * a.row(r).dot(x);
      // log(1 + exp(-margin)) evaluated stably
      acc += margin > 0 ? std::log1p(std::exp(-margin))
                        : -margin + std::log1p(std::exp(margin));
    }
    return acc / a.rows() + 0.5 * cfg_.ridge * x.squaredNorm();
  }

  Vec device_gradient(const Vec& x, int device) const override {
    const auto& a = a_[static_cast<std::size_t>(device)];
    const auto& y = y_[static_cast<std::size_t>(device)];
    Vec g = Vec::Zero(cfg_.dim);
    for (int r = 0; r < a.rows(); ++r) {
      const double margin = y[r] * a.row(r).dot(x);
      const double sig = 1.0 / (1.0 + std::exp(margin));
      g -= (y[r] * sig) * a.row(r).transpose();
    }
    return g / a.rows() + cfg_.ridge * x;
  }

  Vec stochastic_gradient(const Vec& x, int device,
                          std::uint64_t seed) const override {
    const auto& a = a_[static_cast<std::size_t>(device)];
    const auto& y = y_[static_cast<std::size_t>(device)];
    const int n = static_cast<int>(a.rows());
    if (cfg_.batch_size <= 0 || cfg_.batch_size >= n)
      return device_gradient(x, device);
    auto rng = make_rng(seed, "batch", static_cast<std::uint64_t>(device));
    Vec g = Vec::Zero(cfg_.dim);
    for (int r : detail::sample_batch(n, cfg_.batch_size, rng)) {
      const double margin = y[r] * a.row(r).dot(x);
      const double sig = 1.0 / (1.0 + std::exp(margin));
      g -= (y[r] * sig) * a.row(r).transpose();
    }
    return g / cfg_.batch_size + cfg_.ridge * x;
  }

  double smoothness() const override { return omega_; }

 private:
  LogisticTaskConfig cfg_;
  std::vector<Mat> a_;
  std::vector<Vec> y_;
  double omega_ = 0.0;
};

// ---------------------------------------------------------------------------
// MNIST ingestion (IDX format) and a small one-hidden-layer MLP task with the
// class-per-group device split. The dataset is ingested from user-supplied
// files, never bundled.
// ---------------------------------------------------------------------------

namespace detail {
inline std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated IDX file");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}
}  // namespace detail

inline Mat read_idx_images(const std::string& path, int limit = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  if (detail::read_be32(in) != 0x00000803u)
    throw std::runtime_error(path + ": bad magic for IDX image file");
  const int count = static_cast<int>(detail::read_be32(in));
  const int rows = static_cast<int>(detail::read_be32(in));
  const int cols = static_cast<int>(detail::read_be32(in));
  const int take = (limit > 0 && limit < count) ? limit : count;
  Mat out(rows * cols, take);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (int k = 0; k < take; ++k) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw std::runtime_error(path + ": truncated image data");
    for (int d = 0; d < rows * cols; ++d)
      out(d, k) = buf[static_cast<std::size_t>(d)] / 255.0;
  }
  return out;
}

inline std::vector<int> read_idx_labels(const std::string& path, int limit = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  if (detail::read_be32(in) != 0x00000801u)
    throw std::runtime_error(path + ": bad magic for IDX label file");
  const int count = static_cast<int>(detail::read_be32(in));
  const int take = (limit > 0 && limit < count) ? limit : count;
  std::vector<int> labels(static_cast<std::size_t>(take));
  for (int k = 0; k < take; ++k) {
    char c;
    in.read(&c, 1);
    if (!in) throw std::runtime_error(path + ": truncated label data");
    labels[static_cast<std::size_t>(k)] = static_cast<unsigned char>(c);
  }
  return labels;
}

struct MlpTaskConfig {
  int num_devices = 10;
  int hidden = 16;
  int batch_size = 16;
  int limit = 2000;             // images ingested from the file
  double smoothness_estimate = 1.0;
  std::string images_path;
  std::string labels_path;
  std::uint64_t seed = 1;
};

class MlpTask : public Task {
 public:
  explicit MlpTask(const MlpTaskConfig& cfg) : cfg_(cfg) {
    images_ = read_idx_images(cfg.images_path, cfg.limit);
    labels_ = read_idx_labels(cfg.labels_path, cfg.limit);
    if (static_cast<int>(labels_.size()) != images_.cols())
      throw std::runtime_error("MNIST image/label count mismatch");
    in_dim_ = static_cast<int>(images_.rows());
    // Class-per-group split: group g of devices holds samples of classes
    // congruent to g mod the group count.
    const int groups = std::min(10, cfg.num_devices);
    shards_.assign(static_cast<std::size_t>(cfg.num_devices), {});
    std::vector<std::vector<int>> by_class(10);
    for (int k = 0; k < static_cast<int>(labels_.size()); ++k)
      by_class[static_cast<std::size_t>(labels_[static_cast<std::size_t>(k)])]
          .push_back(k);
    for (int cls = 0; cls < 10; ++cls) {
      const int g = cls % groups;
      std::vector<int> members;
      for (int d = 0; d < cfg.num_devices; ++d)
        if (d % groups == g) members.push_back(d);
      int turn = 0;
      for (int k : by_class[static_cast<std::size_t>(cls)]) {
        shards_[static_cast<std::size_t>(members[static_cast<std::size_t>(
                    turn % members.size())])]
            .push_back(k);
        ++turn;
      }
    }
    for (const auto& s : shards_)
      if (s.empty()) throw std::runtime_error("a device received no samples");
  }

  int dim() const override {
    return in_dim_ * cfg_.hidden + cfg_.hidden + cfg_.hidden * 10 + 10;
  }
  int num_devices() const override { return cfg_.num_devices; }
  double smoothness() const override { return cfg_.smoothness_estimate; }

  double device_loss(const Vec& x, int device) const override {
    const auto& shard = shards_[static_cast<std::size_t>(device)];
    double acc = 0.0;
    for (int k : shard) acc += sample_loss(x, k, nullptr);
    return acc / shard.size();
  }

  Vec device_gradient(const Vec& x, int device) const override {
    const auto& shard = shards_[static_cast<std::size_t>(device)];
    Vec g = Vec::Zero(dim());
    Vec tmp(dim());
    for (int k : shard) {
      sample_loss(x, k, &tmp);
      g += tmp;
    }
    return g / shard.size();
  }

  Vec stochastic_gradient(const Vec& x, int device,
                          std::uint64_t seed) const override {
    const auto& shard = shards_[static_cast<std::size_t>(device)];
    const int n = static_cast<int>(shard.size());
    if (cfg_.batch_size <= 0 || cfg_.batch_size >= n)
      return device_gradient(x, device);
    auto rng = make_rng(seed, "batch", static_cast<std::uint64_t>(device));
    Vec g = Vec::Zero(dim());
    Vec tmp(dim());
    for (int r : detail::sample_batch(n, cfg_.batch_size, rng)) {
      sample_loss(x, shard[static_cast<std::size_t>(r)], &tmp);
      g += tmp;
    }
    return g / cfg_.batch_size;
  }

  double accuracy(const Vec& x) const {
    int hits = 0;
    for (int k = 0; k < images_.cols(); ++k)
      if (predict(x, k) == labels_[static_cast<std::size_t>(k)]) ++hits;
    return static_cast<double>(hits) / images_.cols();
  }

 private:
  // Parameter layout: W1 (hidden x in), b1, W2 (10 x hidden), b2.
  double sample_loss(const Vec& x, int k, Vec* grad) const {
    const int h = cfg_.hidden, din = in_dim_;
    Eigen::Map<const Mat> w1(x.data(), h, din);
    Eigen::Map<const Vec> b1(x.data() + h * din, h);
    Eigen::Map<const Mat> w2(x.data() + h * din + h, 10, h);
    Eigen::Map<const Vec> b2(x.data() + h * din + h + 10 * h, 10);
    const Vec img = images_.col(k);
    Vec z1 = w1 * img + b1;
    Vec a1 = z1.array().tanh();
    Vec z2 = w2 * a1 + b2;
    const double zmax = z2.maxCoeff();
    Vec ez = (z2.array() - zmax).exp();
    const double zsum = ez.sum();
    const int label = labels_[static_cast<std::size_t>(k)];
    const double loss = std::log(zsum) - (z2[label] - zmax);
    if (grad) {
      Vec p = ez / zsum;
      p[label] -= 1.0;
      Vec d1 = (w2.transpose() * p).array() * (1.0 - a1.array().square());
      grad->setZero();
      Eigen::Map<Mat>(grad->data(), h, din) = d1 * img.transpose();
      Eigen::Map<Vec>(grad->data() + h * din, h) = d1;
      Eigen::Map<Mat>(grad->data() + h * din + h, 10, h) = p * a1.transpose();
      Eigen::Map<Vec>(grad->data() + h * din + h + 10 * h, 10) = p;
    }
    return loss;
  }

  int predict(const Vec& x, int k) const {
    const int h = cfg_.hidden, din = in_dim_;
    Eigen::Map<const Mat> w1(x.data(), h, din);
    Eigen::Map<const Vec> b1(x.data() + h * din, h);
    Eigen::Map<const Mat> w2(x.data() + h * din + h, 10, h);
    Eigen::Map<const Vec> b2(x.data() + h * din + h + 10 * h, 10);
    Vec z2 = w2 * (w1 * images_.col(k) + b1).array().tanh().matrix() + b2;
    Eigen::Index best;
    z2.maxCoeff(&best);
    return static_cast<int>(best);
  }

  MlpTaskConfig cfg_;
  Mat images_;
  std::vector<int> labels_;
  std::vector<std::vector<int>> shards_;
  int in_dim_ = 0;
};

}  // namespace oadfl
