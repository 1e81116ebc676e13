#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace Eigen {
template <typename DerivativeType>
class AutoDiffScalar;
}

namespace contactsdf {

inline constexpr const char* kVersion = "0.1.0";

template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Vec4 = Eigen::Matrix<S, 4, 1>;
template <typename S>
using Vec6 = Eigen::Matrix<S, 6, 1>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::Vector4d;
using Eigen::VectorXd;
using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

// Errors surfaced by the library. Construction-time geometry problems and
// solver breakdowns are exceptions; everything else is a total function.
struct NonConvexMesh : std::runtime_error {
  explicit NonConvexMesh(const std::string& what) : std::runtime_error(what) {}
};
struct DegenerateMesh : std::runtime_error {
  explicit DegenerateMesh(const std::string& what) : std::runtime_error(what) {}
};
struct SolverFailure : std::runtime_error {
  explicit SolverFailure(const std::string& what) : std::runtime_error(what) {}
};
struct DegenerateNormal : std::runtime_error {
  explicit DegenerateNormal(const std::string& what) : std::runtime_error(what) {}
};
struct NonFiniteResult : std::runtime_error {
  explicit NonFiniteResult(const std::string& what) : std::runtime_error(what) {}
};
struct InfeasibleConstraints : std::runtime_error {
  explicit InfeasibleConstraints(const std::string& what) : std::runtime_error(what) {}
};
struct IterationLimit : std::runtime_error {
  explicit IterationLimit(const std::string& what) : std::runtime_error(what) {}
};
struct NonFiniteObjective : std::runtime_error {
  explicit NonFiniteObjective(const std::string& what) : std::runtime_error(what) {}
};
struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};
struct NonFiniteGradient : std::runtime_error {
  explicit NonFiniteGradient(const std::string& what) : std::runtime_error(what) {}
};

// AutoDiffScalar-friendly accessor: plain double for the fast path,
// .value() for forward-mode scalars.
inline double scalar_value(double x) { return x; }
template <typename DerType>
double scalar_value(const Eigen::AutoDiffScalar<DerType>& x) {
  return x.value();
}

}  // namespace contactsdf
