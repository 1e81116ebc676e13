#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "contactsdf/stepper.hpp"
#include "oracles.hpp"

using namespace contactsdf;
using namespace testsupport;

namespace {

ModelParams identity_params(Eigen::Index n_r, double h = 0.1) {
  ModelParams p;
  p.M_o = Matrix6d::Identity();
  p.K_r_diag = VectorXd::Ones(n_r);
  p.m_o = 1.0;
  p.mu = 0.5;
  p.sigma = 1000.0;
  p.h = h;
  p.tau_r = VectorXd::Zero(n_r);
  return p;
}

// One synthetic contact whose stacked row block is exactly `rows`.
ContactSet synthetic_contacts(const MatrixXd& rows, const VectorXd& phis) {
  ContactSet set;
  set.n_d = 1;
  set.velocity_dim = rows.cols();
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Contact c;
    c.phi = phis[r];
    c.jac_rows = rows.row(r);
    c.normal_row = rows.row(r).transpose();
    set.contacts.push_back(c);
  }
  return set;
}

DualCone make_cone(const MatrixXd& normals, const VectorXd& offsets) {
  DualCone cone;
  cone.normals = normals;
  cone.offsets = offsets;
  cone.dim = normals.cols();
  return cone;
}

}  // namespace

TEST_CASE("Q and b assemble blockwise") {
  ModelParams p = identity_params(3);
  VectorXd u = VectorXd::Zero(3);
  auto m = assemble_Q_b(p, u);
  REQUIRE((m.Q.topLeftCorner(6, 6) - 100.0 * Matrix6d::Identity())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  REQUIRE((m.Q.bottomRightCorner(3, 3) - Matrix3d::Identity())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  REQUIRE((m.Q.topRightCorner(6, 3)).cwiseAbs().maxCoeff() == 0.0);

  VectorXd b_expected(9);
  b_expected << 0, 0, -9.81, 0, 0, 0, 0, 0, 0;
  REQUIRE((m.b - b_expected).cwiseAbs().maxCoeff() < 1e-12);

  // Doubling K_r doubles its Q block and its b contribution.
  ModelParams p2 = p;
  p2.K_r_diag *= 2.0;
  VectorXd u2 = VectorXd::Constant(3, 0.01);
  auto m1 = assemble_Q_b(p, u2);
  auto m2 = assemble_Q_b(p2, u2);
  REQUIRE((m2.Q.bottomRightCorner(3, 3) - 2.0 * m1.Q.bottomRightCorner(3, 3))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  REQUIRE((m2.b.tail(3) - 2.0 * m1.b.tail(3)).cwiseAbs().maxCoeff() < 1e-12);

  // Square-root factors are consistent.
  REQUIRE((m.Q_half * m.Q_half - m.Q).cwiseAbs().maxCoeff() < 1e-9);
  REQUIRE((m.Q_inv_half * m.Q_half - MatrixXd::Identity(9, 9))
              .cwiseAbs()
              .maxCoeff() < 1e-9);
}

TEST_CASE("dual cone rows follow the normalization rule") {
  // Q = I: M_o = h^2 I and K_r = 1.
  ModelParams p = identity_params(3, 1.0);
  p.M_o = Matrix6d::Identity();
  auto m = assemble_Q_b(p, VectorXd::Zero(3));
  REQUIRE((m.Q - MatrixXd::Identity(9, 9)).cwiseAbs().maxCoeff() < 1e-12);

  MatrixXd rows = MatrixXd::Zero(1, 9);
  rows(0, 0) = 1.0;
  VectorXd phis = VectorXd::Constant(1, 0.2);
  auto cone = build_dual_cone(synthetic_contacts(rows, phis), m);
  REQUIRE(cone.row_count() == 1);
  VectorXd n_expected = VectorXd::Zero(9);
  n_expected[0] = -1.0;
  REQUIRE((cone.normals.row(0).transpose() - n_expected).norm() < 1e-12);
  REQUIRE(cone.offsets[0] == Catch::Approx(-0.2).margin(1e-12));

  // Q = 4I scales the offset by the row norm 0.5.
  ModelParams p4 = p;
  p4.M_o = 4.0 * Matrix6d::Identity();
  p4.K_r_diag = VectorXd::Constant(3, 4.0);
  auto m4 = assemble_Q_b(p4, VectorXd::Zero(3));
  auto cone4 = build_dual_cone(synthetic_contacts(rows, phis), m4);
  REQUIRE((cone4.normals.row(0).transpose() - n_expected).norm() < 1e-12);
  REQUIRE(cone4.offsets[0] == Catch::Approx(-0.4).margin(1e-12));

  // Empty contact set gives an empty cone.
  auto empty_cone = build_dual_cone(ContactSet{}, m);
  REQUIRE(empty_cone.empty());
}

TEST_CASE("dsdf closed forms and empty-cone convention") {
  DualCone empty = make_cone(MatrixXd(0, 2), VectorXd(0));
  VectorXd z(2);
  z << -1.0, 0.0;
  REQUIRE(dsdf(empty, z, 500.0) == 0.0);
  REQUIRE(dsdf_gradient(empty, z, 500.0).norm() == 0.0);

  MatrixXd n(1, 2);
  n << -1.0, 0.0;
  VectorXd b = VectorXd::Constant(1, -0.2);
  DualCone cone = make_cone(n, b);
  REQUIRE(dsdf(cone, z, 500.0) == Catch::Approx(0.8).margin(1e-3));
}

TEST_CASE("dsdf matches an independent lse recomputation and the projection") {
  // Queries violate exactly one row; the other offsets are chosen so the
  // projection stays on that face even after the step (the smoothed distance
  // only tracks the exact projection where a single face dominates).
  std::mt19937_64 rng(41);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index dim = 4 + trial % 5;
    const Eigen::Index m = 2 + trial % 4;
    MatrixXd n(m, dim);
    for (Eigen::Index i = 0; i < m; ++i) {
      VectorXd row(dim);
      for (Eigen::Index j = 0; j < dim; ++j) row[j] = gauss(rng);
      n.row(i) = row.normalized();
    }
    VectorXd b(m);
    b[0] = -std::abs(gauss(rng)) * 0.3;
    const double depth = 0.05 + 0.2 * std::abs(gauss(rng));
    VectorXd z = -n.row(0).transpose() * (b[0] - depth);
    for (Eigen::Index i = 1; i < m; ++i) {
      const double overlap = std::max(0.0, -n.row(i).dot(n.row(0))) * depth;
      b[i] = -n.row(i).dot(z) - 0.02 - overlap - std::abs(gauss(rng)) * 0.1;
    }
    DualCone cone = make_cone(n, b);

    const double sigma = 1000.0;
    const double val = dsdf(cone, z, sigma);

    // Independent recomputation of (1/sigma) lse{0, lse{sigma margins}}.
    double inner = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i) {
      const double t = sigma * (n.row(i).dot(z) + b[i]);
      inner = std::max(inner, t) +
              std::log1p(std::exp(std::min(inner, t) - std::max(inner, t)));
    }
    const double outer = std::max(0.0, inner) +
                         std::log1p(std::exp(-std::abs(inner)));
    REQUIRE(val == Catch::Approx(outer / sigma).epsilon(1e-10));

    ProjectionResult pr = project_onto_polyhedron(n, b, z);
    REQUIRE(pr.converged);
    REQUIRE(pr.distance == Catch::Approx(depth).margin(1e-9));
    REQUIRE(std::abs(val - pr.distance) < 0.02);
  }
}

TEST_CASE("unconstrained step is per-step free fall") {
  ModelParams p = identity_params(3);
  SystemState state;
  state.robot_config = VectorXd::Zero(3);
  VectorXd u = VectorXd::Zero(3);
  VectorXd v = step_velocity(state, u, p, ContactSet{});
  VectorXd expected(9);
  expected << 0, 0, -0.981, 0, 0, 0, 0, 0, 0;
  REQUIRE((v - expected).cwiseAbs().maxCoeff() < 1e-12);

  // The spring model moves the robot by its commanded displacement per step.
  VectorXd u2(3);
  u2 << 0.01, 0, 0;
  VectorXd v2 = step_velocity(state, u2, p, ContactSet{});
  REQUIRE(v2.tail(3)[0] == Catch::Approx(0.1).margin(1e-12));
  REQUIRE(v2.tail(3).tail(2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a blocking ground contact matches the QP oracle") {
  auto planes = cuboid_planes(Vector3d(0.03, 0.03, 0.03));
  SystemState state;
  state.robot_config = VectorXd::Zero(3);
  state.object_position = Vector3d(0, 0, 0.03);
  std::vector<QueryPoint> queries;
  QueryPoint q;
  q.body = QueryBody::kGround;
  q.local_position = Vector3d(0, 0, 0);
  queries.push_back(q);

  // Quasi-dynamic regularized inertia keeps the friction-cone corner gap of
  // the smoothed step below the tolerance.
  ModelParams p = identity_params(3);
  p.M_o.diagonal() << 1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-2;
  p.K_r_diag = VectorXd::Constant(3, 100.0);
  p.m_o = 0.1;
  p.mu = 0.3;
  auto contacts = detect_contacts_exact(state, planes, queries, p.mu,
                                        DetectionOptions{});
  REQUIRE(contacts.contact_count() == 1);
  VectorXd u = VectorXd::Zero(3);
  VectorXd v_smooth = step_velocity(state, u, p, contacts);
  VectorXd v_oracle = qp_oracle_step(state, u, p, contacts).v;
  REQUIRE((v_smooth - v_oracle).cwiseAbs().maxCoeff() < 1e-2);
  // The oracle must not sink through the ground.
  REQUIRE(v_oracle[2] > -1e-8);
}

TEST_CASE("oracle with no constraints returns the unconstrained solution") {
  ModelParams p = identity_params(3);
  SystemState state;
  state.robot_config = VectorXd::Zero(3);
  VectorXd u = VectorXd::Constant(3, 0.005);
  auto m = assemble_Q_b(p, u);
  auto res = qp_oracle_step(state, u, p, ContactSet{});
  REQUIRE((res.v - m.Q_inv * m.b / p.h).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("single active constraint reproduces the halfspace projection") {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ModelParams p = identity_params(3);
  SystemState state;
  state.robot_config = VectorXd::Zero(3);
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd u(3);
    for (int i = 0; i < 3; ++i) u[i] = 0.01 * gauss(rng);
    auto m = assemble_Q_b(p, u);
    MatrixXd rows(1, 9);
    for (int i = 0; i < 9; ++i) rows(0, i) = gauss(rng);
    VectorXd phis = VectorXd::Constant(1, 0.01);
    auto res = qp_oracle_step_rows(m, rows, phis);

    // Closed form: project z_q onto the halfspace n z + b <= 0.
    VectorXd w = m.Q_inv_half * rows.row(0).transpose();
    VectorXd n = -w / w.norm();
    const double b = -phis[0] / w.norm();
    VectorXd zq = m.Q_inv_half * m.b;
    const double viol = n.dot(zq) + b;
    VectorXd z = viol > 0 ? VectorXd(zq - viol * n) : zq;
    VectorXd v_expected = m.Q_inv_half * z / p.h;
    REQUIRE((res.v - v_expected).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("oracle KKT residuals vanish on random contact instances") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_contact_instance(rng);
    auto res = qp_oracle_step(inst.state, inst.u, inst.params, inst.contacts);
    if (inst.contacts.empty()) continue;
    auto [jac, phi] = inst.contacts.stacked_rows();
    auto model = assemble_Q_b(inst.params, inst.u);
    auto kkt = oracle_kkt_residuals(model, jac, phi, res);
    REQUIRE(kkt.max() < 1e-8);
  }
}

TEST_CASE("smoothed step approaches the oracle as sigma grows") {
  // Face-contact instances: the regime where the sigma trend holds. At
  // multi-contact wedges the error saturates at the max-approx corner gap
  // instead of decaying.
  std::mt19937_64 rng(53);
  const std::vector<double> sigmas = {50, 100, 500, 1000};
  const int trials = 40;
  std::vector<double> mean_err(sigmas.size(), 0.0);
  std::vector<double> max_err(sigmas.size(), 0.0);
  for (int trial = 0; trial < trials; ++trial) {
    auto inst = face_contact_instance(rng);
    auto v_oracle = qp_oracle_step(inst.state, inst.u, inst.params,
                                   inst.contacts).v;
    for (size_t si = 0; si < sigmas.size(); ++si) {
      ModelParams ps = inst.params;
      ps.sigma = sigmas[si];
      VectorXd v = step_velocity(inst.state, inst.u, ps, inst.contacts);
      const double err = (v - v_oracle).cwiseAbs().maxCoeff();
      mean_err[si] += err / trials;
      max_err[si] = std::max(max_err[si], err);
    }
  }
  for (size_t si = 1; si < sigmas.size(); ++si)
    REQUIRE(mean_err[si] <= mean_err[si - 1] + 1e-6);
  REQUIRE(max_err.back() < 5e-2);
}

TEST_CASE("step is exactly unconstrained when all rows are far inactive") {
  std::mt19937_64 rng(59);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ModelParams p = identity_params(3);
  SystemState state;
  state.robot_config = VectorXd::Zero(3);
  for (int trial = 0; trial < 100; ++trial) {
    VectorXd u(3);
    for (int i = 0; i < 3; ++i) u[i] = 0.01 * gauss(rng);
    auto m = assemble_Q_b(p, u);
    VectorXd zq = m.Q_inv_half * m.b;
    // Rows with margin < -10/sigma at z_q.
    const double sigma = p.sigma;
    MatrixXd n(3, 9);
    VectorXd b(3);
    for (int i = 0; i < 3; ++i) {
      VectorXd row(9);
      for (int j = 0; j < 9; ++j) row[j] = gauss(rng);
      row.normalize();
      n.row(i) = row;
      b[i] = -row.dot(zq) - (10.0 / sigma + std::abs(gauss(rng)));
    }
    DualCone cone = make_cone(n, b);
    VectorXd v = step_velocity_with_cone(m, cone, sigma);
    VectorXd v_free = m.Q_inv * m.b / p.h;
    REQUIRE((v - v_free).norm() <= 1e-6 * v_free.norm() + 1e-9);
  }
}

TEST_CASE("oracle solutions respect the constraints") {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = random_contact_instance(rng);
    if (inst.contacts.empty()) continue;
    auto [jac, phi] = inst.contacts.stacked_rows();
    auto res = qp_oracle_step(inst.state, inst.u, inst.params, inst.contacts);
    VectorXd slack_oracle = jac * res.v + phi / inst.params.h;
    REQUIRE(slack_oracle.minCoeff() > -1e-8);
  }
}

TEST_CASE("smoothed step violates a dominant face by at most the lse envelope") {
  // Single-dominant-face cones: after the step the remaining violation is
  // within ln(k+1)/sigma in z-space. (No such bound holds at multi-face
  // corners, where the averaged gradient undershoots the corner point.)
  std::mt19937_64 rng(62);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index dim = 6;
    const Eigen::Index m = 3 + trial % 4;
    MatrixXd n(m, dim);
    for (Eigen::Index i = 0; i < m; ++i) {
      VectorXd row(dim);
      for (Eigen::Index j = 0; j < dim; ++j) row[j] = gauss(rng);
      n.row(i) = row.normalized();
    }
    VectorXd b(m);
    b[0] = -std::abs(gauss(rng)) * 0.2;
    const double depth = 0.02 + 0.15 * std::abs(gauss(rng));
    VectorXd z_query = -n.row(0).transpose() * (b[0] - depth);
    for (Eigen::Index i = 1; i < m; ++i) {
      const double overlap = std::max(0.0, -n.row(i).dot(n.row(0))) * depth;
      b[i] = -n.row(i).dot(z_query) - 0.02 - overlap - std::abs(gauss(rng)) * 0.1;
    }
    DualCone cone = make_cone(n, b);
    const double sigma = 1000.0;
    const double dist = dsdf(cone, z_query, sigma);
    VectorXd z_next = z_query - dist * dsdf_gradient(cone, z_query, sigma);
    const double envelope = std::log(static_cast<double>(m) + 1.0) / sigma;
    const double worst = (n * z_next + b).maxCoeff();
    REQUIRE(worst <= envelope + 1e-9);
  }
}

TEST_CASE("analytic control jacobian of the step matches finite differences") {
  std::mt19937_64 rng(67);
  int checked = 0;
  while (checked < 60) {
    auto inst = random_contact_instance(rng);
    if (inst.contacts.empty()) continue;
    auto model = assemble_Q_b(inst.params, inst.u);
    DualCone cone = build_dual_cone(inst.contacts, model);
    MatrixXd analytic = step_velocity_control_jacobian(
        model, cone, inst.params.sigma, inst.params.K_r_diag);

    const double eps = 1e-6;
    MatrixXd fd(analytic.rows(), analytic.cols());
    for (Eigen::Index j = 0; j < inst.u.size(); ++j) {
      VectorXd up = inst.u, um = inst.u;
      up[j] += eps;
      um[j] -= eps;
      VectorXd vp = step_velocity(inst.state, up, inst.params, inst.contacts);
      VectorXd vm = step_velocity(inst.state, um, inst.params, inst.contacts);
      fd.col(j) = (vp - vm) / (2.0 * eps);
    }
    const double rel = (analytic - fd).norm() / std::max(1e-12, fd.norm());
    REQUIRE(rel < 1e-4);
    ++checked;
  }
}

TEST_CASE("relaxed KKT solutions approach the exact oracle as epsilon shrinks") {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 25; ++trial) {
    auto inst = random_contact_instance(rng);
    if (inst.contacts.empty()) continue;
    auto exact = qp_oracle_step(inst.state, inst.u, inst.params, inst.contacts);
    double first = -1.0;
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {1e-2, 1e-3, 1e-4}) {
      auto relaxed = qp_oracle_step_relaxed(inst.state, inst.u, inst.params,
                                            inst.contacts, eps);
      REQUIRE(relaxed.converged);
      const double err = (relaxed.v - exact.v).norm();
      REQUIRE(err <= prev + 1e-12);
      if (first < 0.0) first = err;
      prev = err;
    }
    // An order of magnitude closer at the smallest relaxation.
    if (first > 1e-6) REQUIRE(prev < 0.5 * first);
  }
}

TEST_CASE("integration closed forms") {
  SystemState s;
  s.robot_config = VectorXd::Zero(3);

  VectorXd zero = VectorXd::Zero(9);
  SystemState same = integrate(s, zero, 0.1);
  REQUIRE((same.object_position - s.object_position).norm() == 0.0);
  REQUIRE(same.object_quaternion.norm() == Catch::Approx(1.0).margin(1e-15));
  REQUIRE((same.object_quaternion - s.object_quaternion).norm() < 1e-15);

  VectorXd spin = VectorXd::Zero(9);
  spin[5] = 1.0;  // yaw rate 1 rad/s
  SystemState turned = integrate(s, spin, 0.1);
  REQUIRE((turned.object_position - s.object_position).norm() == 0.0);
  REQUIRE(turned.object_quaternion[0] == Catch::Approx(std::cos(0.05)).margin(1e-12));
  REQUIRE(turned.object_quaternion[3] == Catch::Approx(std::sin(0.05)).margin(1e-12));

  // Two half steps against one full step with constant velocity.
  std::mt19937_64 rng(73);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    SystemState st;
    st.robot_config = VectorXd::Zero(3);
    st.object_position = Vector3d(gauss(rng), gauss(rng), gauss(rng));
    st.object_quaternion = random_unit_quaternion(rng);
    VectorXd v(9);
    for (int i = 0; i < 9; ++i) v[i] = gauss(rng);
    SystemState one = integrate(st, v, 0.1);
    SystemState half = integrate(integrate(st, v, 0.05), v, 0.05);
    REQUIRE((one.object_position - half.object_position).cwiseAbs().maxCoeff() <
            1e-14);
    REQUIRE((one.object_quaternion - half.object_quaternion).norm() < 1e-6);
    REQUIRE(one.object_quaternion.norm() == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("non-finite parameters surface as NonFiniteResult") {
  ModelParams p = identity_params(3);
  SystemState state;
  state.robot_config = VectorXd::Zero(3);
  VectorXd u(3);
  u << std::numeric_limits<double>::quiet_NaN(), 0, 0;
  REQUIRE_THROWS_AS(step_velocity(state, u, p, ContactSet{}), NonFiniteResult);
}
