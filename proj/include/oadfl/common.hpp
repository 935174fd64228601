#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace oadfl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using Complex = std::complex<double>;

// Error taxonomy. Every failure mode the library reports deliberately gets
// its own type so callers can distinguish them without parsing messages.
struct InfeasibleSparsity : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidMatrix : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidHyperparameters : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PowerViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InfeasibleStart : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RequiresRegularization : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace oadfl
