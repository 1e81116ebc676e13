#pragma once

// wxyz quaternion helpers. Orientation updates compose on the right with the
// exponential of a body-frame rotation increment.

#include <cmath>

#include "contactsdf/types.hpp"

namespace contactsdf {

template <typename S>
Vec4<S> quat_multiply(const Vec4<S>& a, const Vec4<S>& b) {
  Vec4<S> q;
  q[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3];
  q[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2];
  q[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1];
  q[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0];
  return q;
}

// Unit quaternion of the rotation vector theta (angle*axis).
template <typename S>
Vec4<S> quat_exp(const Vec3<S>& theta) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S angle_sq = theta.squaredNorm();
  Vec4<S> q;
  if (scalar_value(angle_sq) < 1e-16) {
    // sin(a/2)/a to second order
    const S half_sinc = S(0.5) - angle_sq / S(48);
    q[0] = S(1) - angle_sq / S(8);
    q.template tail<3>() = half_sinc * theta;
  } else {
    const S angle = sqrt(angle_sq);
    q[0] = cos(angle / S(2));
    q.template tail<3>() = (sin(angle / S(2)) / angle) * theta;
  }
  return q;
}

// Body-to-world rotation matrix of a unit quaternion.
template <typename S>
Mat3<S> quat_to_rotation(const Vec4<S>& q) {
  const S w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<S> r;
  r(0, 0) = S(1) - S(2) * (y * y + z * z);
  r(0, 1) = S(2) * (x * y - w * z);
  r(0, 2) = S(2) * (x * z + w * y);
  r(1, 0) = S(2) * (x * y + w * z);
  r(1, 1) = S(1) - S(2) * (x * x + z * z);
  r(1, 2) = S(2) * (y * z - w * x);
  r(2, 0) = S(2) * (x * z - w * y);
  r(2, 1) = S(2) * (y * z + w * x);
  r(2, 2) = S(1) - S(2) * (x * x + y * y);
  return r;
}

template <typename S>
Vec4<S> quat_normalized(const Vec4<S>& q) {
  return q / q.norm();
}

// Angle of the relative rotation between two unit quaternions, in [0, pi];
// invariant under q -> -q on either side.
inline double quat_angle_between(const Vector4d& a, const Vector4d& b) {
  const double d = std::min(1.0, std::abs(a.dot(b)));
  return 2.0 * std::acos(d);
}

// --- Jacobian pieces for the control adjoint (double only) ---

// L(a) with a (x) b = L(a) b.
inline Eigen::Matrix4d quat_left_matrix(const Vector4d& a) {
  Eigen::Matrix4d m;
  m << a[0], -a[1], -a[2], -a[3],
       a[1],  a[0], -a[3],  a[2],
       a[2],  a[3],  a[0], -a[1],
       a[3], -a[2],  a[1],  a[0];
  return m;
}

// R(b) with a (x) b = R(b) a.
inline Eigen::Matrix4d quat_right_matrix(const Vector4d& b) {
  Eigen::Matrix4d m;
  m << b[0], -b[1], -b[2], -b[3],
       b[1],  b[0],  b[3], -b[2],
       b[2], -b[3],  b[0],  b[1],
       b[3],  b[2], -b[1],  b[0];
  return m;
}

// d quat_exp(theta) / d theta, 4x3.
inline Eigen::Matrix<double, 4, 3> quat_exp_jacobian(const Vector3d& theta) {
  Eigen::Matrix<double, 4, 3> j;
  const double a2 = theta.squaredNorm();
  if (a2 < 1e-16) {
    j.row(0) = -0.25 * theta.transpose();
    j.bottomRows<3>() = 0.5 * Matrix3d::Identity() -
                        (1.0 / 24.0) * theta * theta.transpose();
    return j;
  }
  const double a = std::sqrt(a2);
  const double half = 0.5 * a;
  const double s = std::sin(half) / a;      // tail = s * theta
  const double dsda = (0.5 * std::cos(half) - s) / a;
  j.row(0) = (-0.5 * std::sin(half) / a) * theta.transpose();
  j.bottomRows<3>() =
      s * Matrix3d::Identity() + (dsda / a) * theta * theta.transpose();
  return j;
}

// d (q/||q||) / d q, 4x4.
inline Eigen::Matrix4d quat_normalize_jacobian(const Vector4d& q) {
  const double n = q.norm();
  const Vector4d u = q / n;
  return (Eigen::Matrix4d::Identity() - u * u.transpose()) / n;
}

}  // namespace contactsdf
