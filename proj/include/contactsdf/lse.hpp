#pragma once

// Smooth truncated distance to a plane set via log-sum-exp, shared by the
// geometric SDF (3-d) and the velocity-space SDF (n-d).

#include <cmath>
#include <type_traits>

#include "contactsdf/types.hpp"

namespace contactsdf {

// (1/sigma) * lse{0, sigma*m_1, ..., sigma*m_k} over signed plane margins
// m_i = n_i.x + b_i. The nested form lse{0, lse{sigma*m_i}} collapses to a
// single sum, which is what we evaluate; the running-max shift keeps
// sigma*m_i up to ~1e4 finite. Strictly positive for k >= 1 because the
// zero slot always contributes exp(0).
template <typename S>
S smooth_plane_set_distance(const MatX<S>& normals, const VecX<S>& offsets,
                            const VecX<S>& x, const S& sigma) {
  using std::exp;
  using std::log;
  const Eigen::Index k = normals.rows();
  if (k == 0) return S(0);
  VecX<S> scaled = sigma * (normals * x + offsets);
  S shift = S(0);  // the zero slot participates in the max
  for (Eigen::Index i = 0; i < k; ++i) {
    if (scaled[i] > shift) shift = scaled[i];
  }
  if constexpr (std::is_same_v<S, double>) {
    // Deep inside the set the exp terms underflow against the zero slot's
    // exp(0); log1p keeps the result strictly positive as long as any term
    // is representable at all.
    if (shift == 0.0) {
      double sum = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) sum += std::exp(scaled[i]);
      return std::log1p(sum) / sigma;
    }
  }
  S sum = exp(S(0) - shift);
  for (Eigen::Index i = 0; i < k; ++i) sum += exp(scaled[i] - shift);
  return (shift + log(sum)) / sigma;
}

// Softmax weights of the plane margins including the implicit zero slot
// (weights sum to 1 with the zero slot's share omitted from the output).
template <typename S>
VecX<S> smooth_plane_set_weights(const MatX<S>& normals, const VecX<S>& offsets,
                                 const VecX<S>& x, const S& sigma) {
  using std::exp;
  const Eigen::Index k = normals.rows();
  VecX<S> scaled = sigma * (normals * x + offsets);
  S shift = S(0);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (scaled[i] > shift) shift = scaled[i];
  }
  S denom = exp(S(0) - shift);
  VecX<S> w(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    w[i] = exp(scaled[i] - shift);
    denom += w[i];
  }
  return w / denom;
}

// Gradient of smooth_plane_set_distance w.r.t. x: the weight-averaged plane
// normal. Its norm is <= 1 and is not renormalized here.
template <typename S>
VecX<S> smooth_plane_set_gradient(const MatX<S>& normals, const VecX<S>& offsets,
                                  const VecX<S>& x, const S& sigma) {
  const Eigen::Index k = normals.rows();
  if (k == 0) return VecX<S>::Zero(x.size());
  VecX<S> w = smooth_plane_set_weights<S>(normals, offsets, x, sigma);
  return normals.transpose() * w;
}

// Hessian: sigma * (sum_i w_i n_i n_i^T - g g^T) with g the gradient above.
template <typename S>
MatX<S> smooth_plane_set_hessian(const MatX<S>& normals, const VecX<S>& offsets,
                                 const VecX<S>& x, const S& sigma) {
  const Eigen::Index d = x.size();
  const Eigen::Index k = normals.rows();
  if (k == 0) return MatX<S>::Zero(d, d);
  VecX<S> w = smooth_plane_set_weights<S>(normals, offsets, x, sigma);
  VecX<S> g = normals.transpose() * w;
  MatX<S> h = -g * g.transpose();
  for (Eigen::Index i = 0; i < k; ++i) {
    h += w[i] * (normals.row(i).transpose() * normals.row(i));
  }
  return sigma * h;
}

// Non-smooth counterpart max(0, max_i m_i); testing/diagnostics only.
template <typename S>
S max_plane_set_distance(const MatX<S>& normals, const VecX<S>& offsets,
                         const VecX<S>& x) {
  S best = S(0);
  for (Eigen::Index i = 0; i < normals.rows(); ++i) {
    S m = normals.row(i).dot(x) + offsets[i];
    if (m > best) best = m;
  }
  return best;
}

}  // namespace contactsdf
