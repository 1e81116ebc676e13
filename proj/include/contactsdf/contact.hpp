#pragma once

// Query-point collision detection against the object's plane set and
// assembly of per-contact frames and Jacobian rows J_{i,j} = Jn - mu * Jd_j
// over the system velocity [v_lin, omega_body, v_robot].

#include <vector>

#include <json.hpp>

#include "contactsdf/geometry.hpp"
#include "contactsdf/state.hpp"

namespace contactsdf {

enum class QueryBody { kRobotSphere, kGround };

struct QueryPoint {
  QueryBody body = QueryBody::kGround;
  int robot_index = -1;         // sphere index for robot queries
  Vector3d local_position = Vector3d::Zero();  // world position for ground
  double radius = 0.0;
};

inline Vector3d query_world_position(const QueryPoint& q,
                                     const SystemState& state) {
  if (q.body == QueryBody::kRobotSphere) {
    return state.robot_config.segment(3 * q.robot_index, 3) + q.local_position;
  }
  return q.local_position;
}

template <typename S>
struct ContactT {
  S phi = S(0);
  Vec3<S> witness_object = Vec3<S>::Zero();  // object frame
  Vec3<S> witness_world = Vec3<S>::Zero();
  Vec3<S> normal_object = Vec3<S>::Zero();   // unit, object-outward
  Vec3<S> normal_world = Vec3<S>::Zero();
  std::vector<Vec3<S>> tangents;             // world frame, n_d entries
  VecX<S> normal_row;                        // Jn over the velocity coords
  MatX<S> jac_rows;                          // n_d x nv, Eq-style rows
  int source = -1;                           // query index
};

template <typename S>
struct ContactSetT {
  std::vector<ContactT<S>> contacts;
  int n_d = 4;
  Eigen::Index velocity_dim = 0;

  Eigen::Index contact_count() const {
    return static_cast<Eigen::Index>(contacts.size());
  }
  Eigen::Index row_count() const { return contact_count() * n_d; }
  bool empty() const { return contacts.empty(); }

  // Stacked constraint rows and distances: row r of the pair (J, phi)
  // corresponds to J_{i,j} v + phi_i / h >= 0.
  std::pair<MatX<S>, VecX<S>> stacked_rows() const {
    MatX<S> jac(row_count(), velocity_dim);
    VecX<S> phi(row_count());
    Eigen::Index r = 0;
    for (const ContactT<S>& c : contacts) {
      for (int j = 0; j < n_d; ++j, ++r) {
        jac.row(r) = c.jac_rows.row(j);
        phi[r] = c.phi;
      }
    }
    return {jac, phi};
  }
};

using Contact = ContactT<double>;
using ContactSet = ContactSetT<double>;

// n_d unit vectors spanning the tangent plane symmetrically (consecutive
// angle 2*pi/n_d, so each vector's negation is present for even n_d). Seed
// axis: the global axis least aligned with the normal, ties broken x then y.
template <typename S>
std::vector<Vec3<S>> tangent_basis(const Vec3<S>& normal, int n_d) {
  int seed = 0;
  double best = std::abs(scalar_value(normal[0]));
  for (int k = 1; k < 3; ++k) {
    const double a = std::abs(scalar_value(normal[k]));
    if (a < best) {
      best = a;
      seed = k;
    }
  }
  Vec3<S> axis = Vec3<S>::Zero();
  axis[seed] = S(1);
  Vec3<S> t1 = normal.cross(axis).normalized();
  Vec3<S> t2 = normal.cross(t1);
  std::vector<Vec3<S>> dirs(static_cast<size_t>(n_d));
  for (int j = 0; j < n_d; ++j) {
    const double ang = 2.0 * M_PI * j / n_d;
    dirs[static_cast<size_t>(j)] = std::cos(ang) * t1 + std::sin(ang) * t2;
  }
  return dirs;
}

namespace detail {

// Row of u . (v_query - v_witness) over [v_lin, omega_body, v_robot]:
// object linear -u, object angular (R^T u) x r_body, robot +u on the
// sphere's coordinates (zero for ground queries).
template <typename S>
VecX<S> relative_velocity_row(const Vec3<S>& u_world, const Mat3<S>& rot,
                              const Vec3<S>& lever_body, const QueryPoint& q,
                              Eigen::Index n_r) {
  VecX<S> row = VecX<S>::Zero(6 + n_r);
  row.template segment<3>(0) = -u_world;
  Vec3<S> u_body = rot.transpose() * u_world;
  row.template segment<3>(3) = u_body.cross(lever_body);
  if (q.body == QueryBody::kRobotSphere) {
    row.template segment<3>(6 + 3 * q.robot_index) = u_world;
  }
  return row;
}

}  // namespace detail

// Fills normal_row and jac_rows of a contact whose frames are already set.
template <typename S>
void contact_jacobian_rows(ContactT<S>& contact, const QueryPoint& query,
                           const Mat3<S>& rot, Eigen::Index n_r, const S& mu) {
  const int n_d = static_cast<int>(contact.tangents.size());
  contact.normal_row = detail::relative_velocity_row<S>(
      contact.normal_world, rot, contact.witness_object, query, n_r);
  contact.jac_rows.resize(n_d, 6 + n_r);
  for (int j = 0; j < n_d; ++j) {
    VecX<S> tangent_row = detail::relative_velocity_row<S>(
        contact.tangents[static_cast<size_t>(j)], rot, contact.witness_object,
        query, n_r);
    contact.jac_rows.row(j) = contact.normal_row - mu * tangent_row;
  }
}

struct DetectionOptions {
  int n_d = 4;
  double cutoff = 0.05;
};

// Smoothed (C-SDF) detection: phi, witness and normal all come from the
// log-sum-exp distance at the given sigma. Queries whose smoothed distance
// minus radius exceeds the cutoff are dropped.
template <typename S>
ContactSetT<S> detect_contacts_t(const SystemState& state,
                                 const SupportPlaneSet& planes,
                                 const std::vector<QueryPoint>& queries,
                                 const S& sigma, const S& mu,
                                 const DetectionOptions& opt) {
  ContactSetT<S> set;
  set.n_d = opt.n_d;
  set.velocity_dim = state.velocity_dim();
  const Matrix3d rot_d = quat_to_rotation<double>(state.object_quaternion);
  const Mat3<S> rot = rot_d.template cast<S>();
  for (size_t qi = 0; qi < queries.size(); ++qi) {
    const QueryPoint& q = queries[qi];
    const Vector3d x_world = query_world_position(q, state);
    const Vector3d x_obj_d =
        rot_d.transpose() * (x_world - state.object_position);
    const Vec3<S> x_obj = x_obj_d.template cast<S>();
    S dist = csdf_t<S>(planes, x_obj, sigma);
    if (scalar_value(dist) - q.radius >= opt.cutoff) continue;

    Vec3<S> grad = csdf_gradient_t<S>(planes, x_obj, sigma);
    const double gnorm = std::sqrt(scalar_value(grad.squaredNorm()));
    if (gnorm < 1e-8) {
      throw DegenerateNormal(
          "query " + std::to_string(qi) +
          " is deep inside the object (csdf gradient ~ 0)");
    }
    ContactT<S> c;
    c.source = static_cast<int>(qi);
    S phi = dist - S(q.radius);
    c.phi = scalar_value(phi) > 0.0 ? phi : S(0);
    c.normal_object = grad.normalized();
    c.witness_object = x_obj - dist * grad;
    c.normal_world = rot * c.normal_object;
    c.witness_world =
        state.object_position.template cast<S>() + rot * c.witness_object;
    c.tangents = tangent_basis<S>(c.normal_world, opt.n_d);
    contact_jacobian_rows<S>(c, q, rot, state.robot_dim(), mu);
    set.contacts.push_back(std::move(c));
  }
  return set;
}

inline ContactSet detect_contacts(const SystemState& state,
                                  const SupportPlaneSet& planes,
                                  const std::vector<QueryPoint>& queries,
                                  double sigma, double mu,
                                  const DetectionOptions& opt) {
  return detect_contacts_t<double>(state, planes, queries, sigma, mu, opt);
}

// Exact-oracle detection for the ground-truth environment: distances,
// witnesses and normals from the polytope projection instead of the C-SDF.
inline ContactSet detect_contacts_exact(const SystemState& state,
                                        const SupportPlaneSet& planes,
                                        const std::vector<QueryPoint>& queries,
                                        double mu, const DetectionOptions& opt) {
  ContactSet set;
  set.n_d = opt.n_d;
  set.velocity_dim = state.velocity_dim();
  const Matrix3d rot = quat_to_rotation<double>(state.object_quaternion);
  for (size_t qi = 0; qi < queries.size(); ++qi) {
    const QueryPoint& q = queries[qi];
    const Vector3d x_world = query_world_position(q, state);
    const Vector3d x_obj = rot.transpose() * (x_world - state.object_position);
    DistanceQueryResult res = exact_distance(planes, x_obj);
    if (res.distance - q.radius >= opt.cutoff) continue;

    Contact c;
    c.source = static_cast<int>(qi);
    c.phi = std::max(0.0, res.distance - q.radius);
    c.normal_object = res.outward_direction;
    c.witness_object = res.closest_point;
    c.normal_world = rot * c.normal_object;
    c.witness_world = state.object_position + rot * c.witness_object;
    c.tangents = tangent_basis<double>(c.normal_world, opt.n_d);
    contact_jacobian_rows<double>(c, q, rot, state.robot_dim(), mu);
    set.contacts.push_back(std::move(c));
  }
  return set;
}

inline nlohmann::json to_json(const ContactSet& set) {
  nlohmann::json j;
  j["n_d"] = set.n_d;
  j["contacts"] = nlohmann::json::array();
  for (const Contact& c : set.contacts) {
    nlohmann::json jc;
    jc["phi"] = c.phi;
    jc["source"] = c.source;
    jc["normal"] = {c.normal_world[0], c.normal_world[1], c.normal_world[2]};
    jc["witness_object"] = {c.witness_object[0], c.witness_object[1],
                            c.witness_object[2]};
    jc["witness_world"] = {c.witness_world[0], c.witness_world[1],
                           c.witness_world[2]};
    j["contacts"].push_back(jc);
  }
  return j;
}

}  // namespace contactsdf
