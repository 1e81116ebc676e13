#pragma once

// Velocity-space (D-SDF) time stepping and the exact quasi-dynamic QP it
// approximates. The QP minimizes ||h Q^(1/2) v - Q^(-1/2) b|| subject to
// J_{i,j} v + phi_i / h >= 0; the change of variables z = h Q^(1/2) v turns
// it into a projection onto the dual cone, which the smoothed step replaces
// with one distance-times-gradient move.

#include <cmath>
#include <utility>
#include <vector>

#include "contactsdf/contact.hpp"
#include "contactsdf/lse.hpp"
#include "contactsdf/projection.hpp"
#include "contactsdf/state.hpp"
#include "contactsdf/types.hpp"

namespace contactsdf {

// Learnable model parameters. M_o acts on the 6-dim object twist; the robot
// is a stiffness (impedance) model, so K_r u is the spring force of the
// commanded displacement u.
struct ModelParams {
  Matrix6d M_o = Matrix6d::Identity();
  VectorXd K_r_diag;        // n_r positive entries
  double m_o = 1.0;         // kg
  double mu = 0.5;          // friction coefficient
  double sigma = 1000.0;    // smoothing sharpness, 1/m
  double h = 0.1;           // time step, fixed (not learned)
  VectorXd tau_r;           // robot non-contact force, n_r
  Vector3d gravity = Vector3d(0, 0, -9.81);

  Eigen::Index robot_dim() const { return K_r_diag.size(); }

  void validate() const {
    if (m_o <= 0 || sigma <= 0 || h <= 0)
      throw std::invalid_argument("m_o, sigma, h must be positive");
    if (mu < 0) throw std::invalid_argument("mu must be nonnegative");
    if ((K_r_diag.array() <= 0).any())
      throw std::invalid_argument("K_r diagonal must be positive");
    if ((M_o - M_o.transpose()).cwiseAbs().maxCoeff() > 1e-9)
      throw std::invalid_argument("M_o must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix6d> es(M_o);
    if (es.eigenvalues().minCoeff() < 1e-10)
      throw std::invalid_argument("M_o must be positive definite");
    if (tau_r.size() != K_r_diag.size())
      throw std::invalid_argument("tau_r dimension mismatch");
  }
};

// Diagonal-parameter variant used on the learning path, templated so the
// whole prediction pipeline can run on forward-mode scalars.
template <typename S>
struct LearnableParamsT {
  Vec6<S> M_o_diag;
  VecX<S> K_r_diag;
  S m_o = S(1);
  S mu = S(0.5);
  S sigma = S(1000);
  double h = 0.1;
  VectorXd tau_r;
  Vector3d gravity = Vector3d(0, 0, -9.81);
};

// Q = blkdiag(M_o / h^2, K_r), b(u) = [m_o g; 0; K_r u + tau_r], together
// with the square-root factors needed by the change of variables. The
// learning path assembles diagonal Q and skips the dense matrices entirely.
template <typename S>
struct QuadraticModel {
  MatX<S> Q, Q_inv, Q_half, Q_inv_half;
  VecX<S> b;
  double h = 0.1;
  bool diagonal = false;
  VecX<S> q_inv_diag, q_inv_half_diag;

  Eigen::Index dim() const {
    return diagonal ? q_inv_diag.size() : Q.rows();
  }
  VecX<S> apply_inv(const VecX<S>& x) const {
    if (diagonal) return q_inv_diag.cwiseProduct(x);
    return Q_inv * x;
  }
  VecX<S> apply_inv_half(const VecX<S>& x) const {
    if (diagonal) return q_inv_half_diag.cwiseProduct(x);
    return Q_inv_half * x;
  }
  MatX<S> apply_inv_half_matrix(const MatX<S>& m) const {
    if (diagonal) return q_inv_half_diag.asDiagonal() * m;
    return Q_inv_half * m;
  }
};

inline QuadraticModel<double> assemble_Q_b(const ModelParams& params,
                                           const VectorXd& u) {
  const Eigen::Index n_r = params.robot_dim();
  const Eigen::Index nv = 6 + n_r;
  QuadraticModel<double> m;
  m.h = params.h;
  m.Q = MatrixXd::Zero(nv, nv);
  m.Q_inv = MatrixXd::Zero(nv, nv);
  m.Q_half = MatrixXd::Zero(nv, nv);
  m.Q_inv_half = MatrixXd::Zero(nv, nv);

  Eigen::SelfAdjointEigenSolver<Matrix6d> es(params.M_o);
  if (es.eigenvalues().minCoeff() < 1e-10)
    throw std::invalid_argument("M_o eigenvalue below 1e-10");
  const Vector6d ev = es.eigenvalues() / (params.h * params.h);
  const Matrix6d v = es.eigenvectors();
  m.Q.topLeftCorner(6, 6) = v * ev.asDiagonal() * v.transpose();
  m.Q_inv.topLeftCorner(6, 6) = v * ev.cwiseInverse().asDiagonal() * v.transpose();
  m.Q_half.topLeftCorner(6, 6) = v * ev.cwiseSqrt().asDiagonal() * v.transpose();
  m.Q_inv_half.topLeftCorner(6, 6) =
      v * ev.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();

  for (Eigen::Index i = 0; i < n_r; ++i) {
    const double k = params.K_r_diag[i];
    m.Q(6 + i, 6 + i) = k;
    m.Q_inv(6 + i, 6 + i) = 1.0 / k;
    m.Q_half(6 + i, 6 + i) = std::sqrt(k);
    m.Q_inv_half(6 + i, 6 + i) = 1.0 / std::sqrt(k);
  }

  m.b = VectorXd::Zero(nv);
  m.b.head<3>() = params.m_o * params.gravity;
  m.b.tail(n_r) = params.K_r_diag.cwiseProduct(u) + params.tau_r;
  return m;
}

template <typename S>
QuadraticModel<S> assemble_Q_b_t(const LearnableParamsT<S>& params,
                                 const VectorXd& u) {
  using std::sqrt;
  const Eigen::Index n_r = params.K_r_diag.size();
  const Eigen::Index nv = 6 + n_r;
  QuadraticModel<S> m;
  m.h = params.h;
  m.diagonal = true;
  m.q_inv_diag.resize(nv);
  m.q_inv_half_diag.resize(nv);
  const double h2 = params.h * params.h;
  for (Eigen::Index i = 0; i < 6; ++i) {
    const S q = params.M_o_diag[i] / h2;
    m.q_inv_diag[i] = S(1) / q;
    m.q_inv_half_diag[i] = S(1) / sqrt(q);
  }
  for (Eigen::Index i = 0; i < n_r; ++i) {
    const S k = params.K_r_diag[i];
    m.q_inv_diag[6 + i] = S(1) / k;
    m.q_inv_half_diag[6 + i] = S(1) / sqrt(k);
  }
  m.b = VecX<S>::Zero(nv);
  for (int k = 0; k < 3; ++k) m.b[k] = params.m_o * params.gravity[k];
  for (Eigen::Index i = 0; i < n_r; ++i)
    m.b[6 + i] = params.K_r_diag[i] * u[i] + params.tau_r[i];
  return m;
}

// State-dependent constraint set in z-space: rows n_{i,j} = -Q^(-1/2) J^T
// normalized, offsets b_{i,j} = -phi / ||Q^(-1/2) J^T||.
template <typename S>
struct DualConeT {
  MatX<S> normals;  // rows x nv, unit rows
  VecX<S> offsets;
  Eigen::Index dim = 0;
  Eigen::Index row_count() const { return normals.rows(); }
  bool empty() const { return normals.rows() == 0; }
};

using DualCone = DualConeT<double>;

template <typename S>
DualConeT<S> build_dual_cone_t(const ContactSetT<S>& contacts,
                               const QuadraticModel<S>& model) {
  DualConeT<S> cone;
  cone.dim = model.dim();
  if (contacts.empty()) {
    cone.normals.resize(0, cone.dim);
    cone.offsets.resize(0);
    return cone;
  }
  auto [jac, phi] = contacts.stacked_rows();
  std::vector<Eigen::Index> kept;
  MatX<S> w = model.apply_inv_half_matrix(jac.transpose());  // nv x rows
  VecX<S> norms(w.cols());
  for (Eigen::Index r = 0; r < w.cols(); ++r) {
    norms[r] = w.col(r).norm();
    if (scalar_value(norms[r]) >= 1e-10) kept.push_back(r);
  }
  cone.normals.resize(static_cast<Eigen::Index>(kept.size()), cone.dim);
  cone.offsets.resize(static_cast<Eigen::Index>(kept.size()));
  for (size_t i = 0; i < kept.size(); ++i) {
    const Eigen::Index r = kept[i];
    cone.normals.row(static_cast<Eigen::Index>(i)) =
        -w.col(r).transpose() / norms[r];
    cone.offsets[static_cast<Eigen::Index>(i)] = -phi[r] / norms[r];
  }
  return cone;
}

inline DualCone build_dual_cone(const ContactSet& contacts,
                                const QuadraticModel<double>& model) {
  return build_dual_cone_t<double>(contacts, model);
}

// Smoothed distance to the dual cone; exactly zero for an empty cone, which
// keeps the explicit step equal to the unconstrained solution.
template <typename S>
S dsdf_t(const DualConeT<S>& cone, const VecX<S>& z_query, const S& sigma) {
  return smooth_plane_set_distance<S>(cone.normals, cone.offsets, z_query,
                                      sigma);
}

template <typename S>
VecX<S> dsdf_gradient_t(const DualConeT<S>& cone, const VecX<S>& z_query,
                        const S& sigma) {
  return smooth_plane_set_gradient<S>(cone.normals, cone.offsets, z_query,
                                      sigma);
}

inline double dsdf(const DualCone& cone, const VectorXd& z_query, double sigma) {
  return dsdf_t<double>(cone, z_query, sigma);
}

inline VectorXd dsdf_gradient(const DualCone& cone, const VectorXd& z_query,
                              double sigma) {
  return dsdf_gradient_t<double>(cone, z_query, sigma);
}

// Explicit velocity step: v+ = (1/h) Q^-1 b - (1/h) Q^(-1/2) [dsdf * grad]
// evaluated at z_query = Q^(-1/2) b(u).
template <typename S>
VecX<S> step_velocity_t(const QuadraticModel<S>& model,
                        const DualConeT<S>& cone, const S& sigma) {
  VecX<S> z_query = model.apply_inv_half(model.b);
  VecX<S> v = model.apply_inv(model.b);
  if (!cone.empty()) {
    S dist = dsdf_t<S>(cone, z_query, sigma);
    VecX<S> grad = dsdf_gradient_t<S>(cone, z_query, sigma);
    v -= model.apply_inv_half(VecX<S>(dist * grad));
  }
  return v / S(model.h);
}

inline VectorXd step_velocity(const SystemState& state, const VectorXd& u,
                              const ModelParams& params,
                              const ContactSet& contacts) {
  (void)state;
  QuadraticModel<double> model = assemble_Q_b(params, u);
  DualCone cone = build_dual_cone(contacts, model);
  VectorXd v = step_velocity_t<double>(model, cone, params.sigma);
  if (!v.allFinite())
    throw NonFiniteResult("step_velocity produced a non-finite coordinate");
  return v;
}

inline VectorXd step_velocity_with_cone(const QuadraticModel<double>& model,
                                        const DualCone& cone, double sigma) {
  VectorXd v = step_velocity_t<double>(model, cone, sigma);
  if (!v.allFinite())
    throw NonFiniteResult("step_velocity produced a non-finite coordinate");
  return v;
}

// Analytic d v+ / d u. Only the robot block of b depends on u:
// db/du = [0; K_r], and the smoothed term differentiates through
// psi(z) = dsdf * grad dsdf with jacobian g g^T + dsdf * H.
inline MatrixXd step_velocity_control_jacobian(const QuadraticModel<double>& model,
                                               const DualCone& cone,
                                               double sigma,
                                               const VectorXd& k_r_diag) {
  const Eigen::Index nv = model.dim();
  const Eigen::Index n_r = k_r_diag.size();
  MatrixXd db_du = MatrixXd::Zero(nv, n_r);
  db_du.bottomRows(n_r) = MatrixXd(k_r_diag.asDiagonal());
  MatrixXd dv = model.Q_inv * db_du;
  if (!cone.empty()) {
    VectorXd z_query = model.Q_inv_half * model.b;
    const double dist = dsdf(cone, z_query, sigma);
    VectorXd grad = dsdf_gradient(cone, z_query, sigma);
    MatrixXd hess = smooth_plane_set_hessian<double>(cone.normals, cone.offsets,
                                                     z_query, sigma);
    MatrixXd dpsi = grad * grad.transpose() + dist * hess;
    dv -= model.Q_inv_half * dpsi * model.Q_inv_half * db_du;
  }
  return dv / model.h;
}

// ---------------------------------------------------------------------------
// Exact QP oracle and the relaxed-KKT baseline

struct OracleStepResult {
  VectorXd v;
  VectorXd multipliers;  // one per constraint row, v-space scaling
  int iterations = 0;
};

// KKT residuals of (v, lambda) for the quasi-dynamic QP, normalized by the
// problem scale.
inline KktResiduals oracle_kkt_residuals(const QuadraticModel<double>& model,
                                         const MatrixXd& jac,
                                         const VectorXd& phi,
                                         const OracleStepResult& result) {
  const double h = model.h;
  KktResiduals r;
  VectorXd stat = h * h * model.Q * result.v - h * model.b;
  if (jac.rows() > 0) stat -= jac.transpose() * result.multipliers;
  const double scale = std::max(1.0, (h * model.b).cwiseAbs().maxCoeff());
  r.stationarity = stat.cwiseAbs().maxCoeff() / scale;
  if (jac.rows() > 0) {
    VectorXd slack = jac * result.v + phi / h;
    r.primal = std::max(0.0, -slack.minCoeff());
    r.dual = std::max(0.0, -result.multipliers.minCoeff());
    r.complementarity =
        result.multipliers.cwiseProduct(slack).cwiseAbs().maxCoeff() / scale;
  }
  return r;
}

inline OracleStepResult qp_oracle_step_rows(const QuadraticModel<double>& model,
                                            const MatrixXd& jac,
                                            const VectorXd& phi,
                                            int max_iterations = 400) {
  const double h = model.h;
  OracleStepResult out;
  if (jac.rows() == 0) {
    out.v = model.Q_inv * model.b / h;
    out.multipliers.resize(0);
    return out;
  }
  // z-space cone rows, keeping the same normalization as build_dual_cone.
  MatrixXd w = model.Q_inv_half * jac.transpose();
  VectorXd norms(w.cols());
  std::vector<Eigen::Index> kept;
  for (Eigen::Index r = 0; r < w.cols(); ++r) {
    norms[r] = w.col(r).norm();
    if (norms[r] >= 1e-10) kept.push_back(r);
  }
  MatrixXd cn(static_cast<Eigen::Index>(kept.size()), model.dim());
  VectorXd co(static_cast<Eigen::Index>(kept.size()));
  for (size_t i = 0; i < kept.size(); ++i) {
    cn.row(static_cast<Eigen::Index>(i)) =
        -w.col(kept[i]).transpose() / norms[kept[i]];
    co[static_cast<Eigen::Index>(i)] = -phi[kept[i]] / norms[kept[i]];
  }
  VectorXd z_query = model.Q_inv_half * model.b;
  ProjectionResult pr =
      project_onto_polyhedron(cn, co, z_query, max_iterations);
  if (!pr.converged)
    throw IterationLimit("dual-cone projection exceeded its iteration budget");
  out.v = model.Q_inv_half * pr.point / h;
  out.iterations = pr.iterations;
  out.multipliers = VectorXd::Zero(jac.rows());
  for (size_t i = 0; i < kept.size(); ++i) {
    out.multipliers[kept[i]] =
        h * pr.multipliers[static_cast<Eigen::Index>(i)] / norms[kept[i]];
  }
  return out;
}

inline OracleStepResult qp_oracle_step(const SystemState& state,
                                       const VectorXd& u,
                                       const ModelParams& params,
                                       const ContactSet& contacts) {
  (void)state;
  QuadraticModel<double> model = assemble_Q_b(params, u);
  if (contacts.empty())
    return qp_oracle_step_rows(model, MatrixXd(0, model.dim()), VectorXd(0));
  auto [jac, phi] = contacts.stacked_rows();
  return qp_oracle_step_rows(model, jac, phi);
}

// Relaxed-KKT solve: Newton on the central-path conditions with
// lambda_i s_i = epsilon, the barrier-smoothed baseline model.
struct RelaxedStepResult {
  VectorXd v;
  VectorXd multipliers;
  VectorXd slacks;
  int iterations = 0;
  bool converged = false;
};

inline RelaxedStepResult qp_relaxed_kkt_step_rows(
    const QuadraticModel<double>& model, const MatrixXd& jac,
    const VectorXd& phi, double epsilon, int max_iterations = 100,
    double tolerance = 1e-11) {
  const double h = model.h;
  const Eigen::Index m = jac.rows();
  RelaxedStepResult out;
  if (m == 0) {
    out.v = model.Q_inv * model.b / h;
    out.converged = true;
    return out;
  }
  VectorXd v = model.Q_inv * model.b / h;
  VectorXd s = (jac * v + phi / h).cwiseMax(std::sqrt(epsilon));
  VectorXd lam = (epsilon * s.cwiseInverse()).cwiseMax(1e-12);

  const double scale = std::max(1.0, (h * model.b).cwiseAbs().maxCoeff());
  const MatrixXd h2q = h * h * model.Q;
  for (int iter = 0; iter < max_iterations; ++iter) {
    out.iterations = iter + 1;
    VectorXd r_stat = h2q * v - h * model.b - jac.transpose() * lam;
    VectorXd r_slack = s - jac * v - phi / h;
    VectorXd r_comp = (lam.cwiseProduct(s).array() - epsilon).matrix();
    const double err = std::max({r_stat.cwiseAbs().maxCoeff() / scale,
                                 r_slack.cwiseAbs().maxCoeff(),
                                 r_comp.cwiseAbs().maxCoeff() / scale});
    if (err < tolerance) {
      out.converged = true;
      break;
    }
    // Eliminate ds = J dv - r_slack and dlam = -(r_comp + lam ds) / s.
    VectorXd lam_over_s = lam.cwiseQuotient(s);
    MatrixXd kkt = h2q + jac.transpose() * lam_over_s.asDiagonal() * jac;
    VectorXd rhs = -r_stat - jac.transpose() *
                                 ((r_comp - lam.cwiseProduct(r_slack))
                                      .cwiseQuotient(s));
    VectorXd dv = kkt.ldlt().solve(rhs);
    VectorXd ds = jac * dv - r_slack;
    VectorXd dlam = -(r_comp + lam.cwiseProduct(ds)).cwiseQuotient(s);
    // Fraction-to-boundary keeps lambda, s strictly positive.
    double alpha = 1.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (ds[i] < 0) alpha = std::min(alpha, -0.995 * s[i] / ds[i]);
      if (dlam[i] < 0) alpha = std::min(alpha, -0.995 * lam[i] / dlam[i]);
    }
    v += alpha * dv;
    s += alpha * ds;
    lam += alpha * dlam;
  }
  if (!out.converged)
    throw IterationLimit("relaxed KKT newton did not converge");
  out.v = v;
  out.multipliers = lam;
  out.slacks = s;
  return out;
}

inline RelaxedStepResult qp_oracle_step_relaxed(const SystemState& state,
                                                const VectorXd& u,
                                                const ModelParams& params,
                                                const ContactSet& contacts,
                                                double epsilon) {
  (void)state;
  QuadraticModel<double> model = assemble_Q_b(params, u);
  if (contacts.empty())
    return qp_relaxed_kkt_step_rows(model, MatrixXd(0, model.dim()),
                                    VectorXd(0), epsilon);
  auto [jac, phi] = contacts.stacked_rows();
  return qp_relaxed_kkt_step_rows(model, jac, phi, epsilon);
}

// Implicit-function derivative of the relaxed step w.r.t. u:
// (h^2 Q + J^T diag(lam/s) J) dv/du = h db/du.
inline MatrixXd relaxed_step_control_jacobian(const QuadraticModel<double>& model,
                                              const MatrixXd& jac,
                                              const RelaxedStepResult& sol,
                                              const VectorXd& k_r_diag) {
  const Eigen::Index nv = model.dim();
  const Eigen::Index n_r = k_r_diag.size();
  MatrixXd db_du = MatrixXd::Zero(nv, n_r);
  db_du.bottomRows(n_r) = MatrixXd(k_r_diag.asDiagonal());
  MatrixXd kkt = model.h * model.h * model.Q;
  if (jac.rows() > 0) {
    VectorXd lam_over_s = sol.multipliers.cwiseQuotient(sol.slacks);
    kkt += jac.transpose() * lam_over_s.asDiagonal() * jac;
  }
  return kkt.ldlt().solve(model.h * db_du);
}

// ---------------------------------------------------------------------------
// Integration

template <typename S>
SystemStateT<S> integrate_t(const SystemStateT<S>& state, const VecX<S>& v,
                            double h) {
  SystemStateT<S> next;
  next.object_position =
      state.object_position + S(h) * v.template segment<3>(0);
  Vec3<S> theta = S(h) * v.template segment<3>(3);
  next.object_quaternion = quat_normalized<S>(
      quat_multiply<S>(state.object_quaternion, quat_exp<S>(theta)));
  next.robot_config = state.robot_config + S(h) * v.tail(v.size() - 6);
  return next;
}

inline SystemState integrate(const SystemState& state, const VectorXd& v_plus,
                             double h) {
  return integrate_t<double>(state, v_plus, h);
}

}  // namespace contactsdf
