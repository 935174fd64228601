#pragma once

#include <algorithm>
#include <cmath>

#include "oadfl/common.hpp"

namespace oadfl {

inline void require_symmetric(const Mat& w, double tol = 1e-8) {
  if (w.rows() != w.cols()) throw InvalidMatrix("matrix is not square");
  if ((w - w.transpose()).cwiseAbs().maxCoeff() > tol)
    throw InvalidMatrix("matrix is not symmetric");
}

// Spectral statistic of a symmetric doubly stochastic matrix: the squared
// magnitude of the largest eigenvalue other than the unit one. Computed as
// the squared spectral norm of W - (1/M)*ones, which removes the unit
// eigenvalue exactly.
inline double delta(const Mat& w) {
  require_symmetric(w);
  const double m = static_cast<double>(w.rows());
  Mat dev = w;
  dev.array() -= 1.0 / m;
  Eigen::SelfAdjointEigenSolver<Mat> es(dev, Eigen::EigenvaluesOnly);
  const double top = es.eigenvalues().cwiseAbs().maxCoeff();
  return top * top;
}

// Frobenius-nearest symmetric matrix whose deviation from (1/M)*ones has
// spectral norm at most sqrt(delta_hat): eigenvalues of the deviation are
// clipped into [-sqrt(delta_hat), +sqrt(delta_hat)].
inline Mat project_spectral(const Mat& w, double delta_hat) {
  if (delta_hat < 0.0)
    throw InvalidHyperparameters("spectral radius bound must be nonnegative");
  require_symmetric(w);
  const double m = static_cast<double>(w.rows());
  const double cap = std::sqrt(delta_hat);
  Mat dev = w;
  dev.array() -= 1.0 / m;
  Eigen::SelfAdjointEigenSolver<Mat> es(dev);
  Vec lam = es.eigenvalues();
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    lam[i] = std::clamp(lam[i], -cap, cap);
  Mat out = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  out.array() += 1.0 / m;
  return 0.5 * (out + out.transpose());
}

}  // namespace oadfl
