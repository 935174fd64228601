#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "oadfl/common.hpp"

namespace oadfl {

// One master seed fans out into independent named streams so that enabling or
// disabling one consumer (channels, noise, data sampling, topology, ...) never
// shifts the draws of another.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                                 std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the stream tag
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(master ^ mix64(h ^ mix64(index)));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view stream,
                                std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(master, stream, index));
}

// Box-Muller on explicit 53-bit uniforms. std::normal_distribution is
// implementation-defined, which would break the bit-reproducibility contract
// across toolchains; this transform is pinned.
class Gaussian {
 public:
  double operator()(std::mt19937_64& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(rng);
    while (u1 <= 0.0) u1 = uniform(rng);
    const double u2 = uniform(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  static double uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline void fill_gaussian(Eigen::Ref<Mat> m, std::mt19937_64& rng) {
  Gaussian g;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = g(rng);
}

inline Vec gaussian_vector(Eigen::Index n, std::mt19937_64& rng) {
  Vec v(n);
  Gaussian g;
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

// Circularly-symmetric complex normal with total variance `var`: real and
// imaginary parts each carry var/2.
inline void fill_complex_gaussian(Eigen::Ref<CMat> m, std::mt19937_64& rng,
                                  double var = 1.0) {
  Gaussian g;
  const double s = std::sqrt(var / 2.0);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = Complex(s * g(rng), s * g(rng));
}

}  // namespace oadfl
