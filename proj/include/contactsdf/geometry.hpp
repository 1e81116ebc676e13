#pragma once

// Convex object geometry as supporting-plane sets, with an exact projection
// oracle and the smoothed (log-sum-exp) signed distance used for collision
// detection.

#include <array>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "contactsdf/lse.hpp"
#include "contactsdf/projection.hpp"
#include "contactsdf/types.hpp"

namespace contactsdf {

// Intersection of halfspaces n_i.x + b_i <= 0, planes expressed in `frame`.
struct SupportPlaneSet {
  MatrixXd normals;  // I x 3, unit rows
  VectorXd offsets;  // I
  std::string frame = "object";

  Eigen::Index plane_count() const { return normals.rows(); }
};

struct DistanceQueryResult {
  double distance = 0.0;
  Vector3d closest_point = Vector3d::Zero();
  Vector3d outward_direction = Vector3d::Zero();
};

// ---------------------------------------------------------------------------
// Exact oracle

inline DistanceQueryResult exact_distance(const SupportPlaneSet& planes,
                                          const Vector3d& x_query,
                                          int max_iterations = 200) {
  ProjectionResult pr = project_onto_polyhedron(
      planes.normals, planes.offsets, x_query, max_iterations);
  if (!pr.converged) {
    throw SolverFailure("polytope projection did not converge in " +
                        std::to_string(max_iterations) + " iterations");
  }
  DistanceQueryResult out;
  out.distance = pr.distance;
  out.closest_point = pr.point;
  if (pr.distance > 1e-12) {
    out.outward_direction = (x_query - pr.point) / pr.distance;
  } else {
    // On or inside the set: fall back to the nearest plane's normal.
    Eigen::Index best = 0;
    (planes.normals * x_query + planes.offsets).maxCoeff(&best);
    out.outward_direction = planes.normals.row(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Smoothed distance (C-SDF)

template <typename S>
S csdf_t(const SupportPlaneSet& planes, const Vec3<S>& x_query, const S& sigma) {
  MatX<S> n = planes.normals.template cast<S>();
  VecX<S> b = planes.offsets.template cast<S>();
  VecX<S> x = x_query;
  return smooth_plane_set_distance<S>(n, b, x, sigma);
}

template <typename S>
Vec3<S> csdf_gradient_t(const SupportPlaneSet& planes, const Vec3<S>& x_query,
                        const S& sigma) {
  MatX<S> n = planes.normals.template cast<S>();
  VecX<S> b = planes.offsets.template cast<S>();
  VecX<S> x = x_query;
  VecX<S> g = smooth_plane_set_gradient<S>(n, b, x, sigma);
  return Vec3<S>(g[0], g[1], g[2]);
}

inline double csdf(const SupportPlaneSet& planes, const Vector3d& x_query,
                   double sigma) {
  VectorXd x = x_query;
  return smooth_plane_set_distance<double>(planes.normals, planes.offsets, x,
                                           sigma);
}

inline Vector3d csdf_gradient(const SupportPlaneSet& planes,
                              const Vector3d& x_query, double sigma) {
  VectorXd x = x_query;
  return smooth_plane_set_gradient<double>(planes.normals, planes.offsets, x,
                                           sigma);
}

// Closest point per the smoothed model: x - csdf(x) * grad csdf(x). The
// gradient is used as-is (norm <= 1, not renormalized) so the expression
// stays consistent with the velocity-space step.
inline Vector3d closest_point_approx(const SupportPlaneSet& planes,
                                     const Vector3d& x_query, double sigma) {
  return x_query - csdf(planes, x_query, sigma) *
                       csdf_gradient(planes, x_query, sigma);
}

// Non-smooth max(0, max_i margin); testing and field dumps only.
inline double max_approx_distance(const SupportPlaneSet& planes,
                                  const Vector3d& x_query) {
  VectorXd x = x_query;
  return max_plane_set_distance<double>(planes.normals, planes.offsets, x);
}

struct CsdfDiagnostics {
  double value = 0.0;
  Vector3d gradient = Vector3d::Zero();
  double gradient_norm = 0.0;
};

inline CsdfDiagnostics csdf_diagnostics(const SupportPlaneSet& planes,
                                        const Vector3d& x_query, double sigma) {
  CsdfDiagnostics d;
  d.value = csdf(planes, x_query, sigma);
  d.gradient = csdf_gradient(planes, x_query, sigma);
  d.gradient_norm = d.gradient.norm();
  return d;
}

// ---------------------------------------------------------------------------
// Construction and validation

// All vertices of {x : n_i.x + b_i <= 0} by plane-triple enumeration.
// Intended for desk-scale plane counts.
inline std::vector<Vector3d> enumerate_vertices(const SupportPlaneSet& planes,
                                                double feas_tol = 1e-7) {
  const Eigen::Index m = planes.plane_count();
  std::vector<Vector3d> verts;
  Matrix3d a;
  Vector3d rhs;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      for (Eigen::Index k = j + 1; k < m; ++k) {
        a.row(0) = planes.normals.row(i);
        a.row(1) = planes.normals.row(j);
        a.row(2) = planes.normals.row(k);
        if (std::abs(a.determinant()) < 1e-10) continue;
        rhs << -planes.offsets[i], -planes.offsets[j], -planes.offsets[k];
        Vector3d v = a.partialPivLu().solve(rhs);
        if (((planes.normals * v + planes.offsets).array() > feas_tol).any())
          continue;
        bool dup = false;
        for (const Vector3d& w : verts) {
          if ((w - v).norm() < 1e-9) {
            dup = true;
            break;
          }
        }
        if (!dup) verts.push_back(v);
      }
    }
  }
  return verts;
}

// Nonempty + bounded check. Exhaustive vertex enumeration for small sets;
// beyond that, probes axis/diagonal/random far directions for a feasible
// recession ray.
inline void validate_support_plane_set(const SupportPlaneSet& planes,
                                       bool check_bounded = true) {
  const Eigen::Index m = planes.plane_count();
  if (m < 1) throw DegenerateMesh("plane set is empty");
  if (planes.offsets.size() != m)
    throw DegenerateMesh("normals/offsets size mismatch");
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::abs(planes.normals.row(i).norm() - 1.0) > 1e-9)
      throw DegenerateMesh("plane normal " + std::to_string(i) +
                           " is not unit length");
  }
  if (!check_bounded) return;

  if (Eigen::FullPivLU<MatrixXd>(planes.normals).rank() < 3)
    throw DegenerateMesh("plane normals do not span 3-d: set is unbounded");

  std::vector<Vector3d> verts;
  if (m <= 64) {
    verts = enumerate_vertices(planes);
    if (verts.empty())
      throw DegenerateMesh("plane set has no vertices (empty or unbounded)");
  } else {
    ProjectionResult pr =
        project_onto_polyhedron(planes.normals, planes.offsets,
                                VectorXd::Zero(3));
    if (!pr.converged) throw DegenerateMesh("could not find a feasible point");
    verts.push_back(pr.point);
  }

  Vector3d centroid = Vector3d::Zero();
  double rmax = 0.0;
  for (const Vector3d& v : verts) centroid += v;
  centroid /= static_cast<double>(verts.size());
  for (const Vector3d& v : verts) rmax = std::max(rmax, (v - centroid).norm());
  const double far = 10.0 * (rmax + 1.0);

  std::vector<Vector3d> dirs;
  for (int k = 0; k < 3; ++k) {
    dirs.push_back(Vector3d::Unit(k));
    dirs.push_back(-Vector3d::Unit(k));
  }
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1})
        dirs.push_back(Vector3d(sx, sy, sz).normalized());
  std::mt19937_64 rng(0x5eedULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    Vector3d d(gauss(rng), gauss(rng), gauss(rng));
    if (d.norm() > 1e-9) dirs.push_back(d.normalized());
  }
  for (const Vector3d& d : dirs) {
    Vector3d probe = centroid + far * d;
    if (((planes.normals * probe + planes.offsets).array() <= 1e-9).all())
      throw DegenerateMesh("plane set is unbounded along a probed direction");
  }
}

// One outward plane per unique face orientation of a closed convex
// triangle mesh. Duplicated coplanar faces are merged.
inline SupportPlaneSet build_from_mesh(
    const std::vector<Vector3d>& vertices,
    const std::vector<std::array<int, 3>>& faces,
    const std::string& frame = "object") {
  if (vertices.size() < 4 || faces.empty())
    throw DegenerateMesh("mesh needs at least 4 vertices and one face");

  Vector3d centroid = Vector3d::Zero();
  for (const Vector3d& v : vertices) centroid += v;
  centroid /= static_cast<double>(vertices.size());

  double volume = 0.0;
  for (const auto& f : faces) {
    const Vector3d a = vertices[static_cast<size_t>(f[0])] - centroid;
    const Vector3d b = vertices[static_cast<size_t>(f[1])] - centroid;
    const Vector3d c = vertices[static_cast<size_t>(f[2])] - centroid;
    volume += std::abs(a.dot(b.cross(c))) / 6.0;
  }
  if (volume < 1e-12) throw DegenerateMesh("mesh volume below 1e-12");

  std::vector<Vector3d> ns;
  std::vector<double> bs;
  for (const auto& f : faces) {
    const Vector3d& v0 = vertices[static_cast<size_t>(f[0])];
    const Vector3d& v1 = vertices[static_cast<size_t>(f[1])];
    const Vector3d& v2 = vertices[static_cast<size_t>(f[2])];
    Vector3d n = (v1 - v0).cross(v2 - v0);
    const double len = n.norm();
    if (len < 1e-14) continue;  // sliver triangle, no orientation
    n /= len;
    double b = -n.dot(v0);
    if (n.dot(centroid) + b > 0.0) {
      n = -n;
      b = -b;
    }
    bool merged = false;
    for (size_t i = 0; i < ns.size(); ++i) {
      if ((ns[i] - n).norm() < 1e-8 && std::abs(bs[i] - b) < 1e-8) {
        merged = true;
        break;
      }
    }
    if (!merged) {
      ns.push_back(n);
      bs.push_back(b);
    }
  }
  if (ns.empty()) throw DegenerateMesh("all faces degenerate");

  SupportPlaneSet planes;
  planes.normals.resize(static_cast<Eigen::Index>(ns.size()), 3);
  planes.offsets.resize(static_cast<Eigen::Index>(ns.size()));
  for (size_t i = 0; i < ns.size(); ++i) {
    planes.normals.row(static_cast<Eigen::Index>(i)) = ns[i];
    planes.offsets[static_cast<Eigen::Index>(i)] = bs[i];
  }
  planes.frame = frame;

  for (size_t vi = 0; vi < vertices.size(); ++vi) {
    VectorXd margins = planes.normals * vertices[vi] + planes.offsets;
    if (margins.maxCoeff() > 1e-6)
      throw NonConvexMesh("vertex " + std::to_string(vi) +
                          " violates a face plane by " +
                          std::to_string(margins.maxCoeff()));
  }
  validate_support_plane_set(planes);
  return planes;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const SupportPlaneSet& planes) {
  nlohmann::json j;
  j["normals"] = nlohmann::json::array();
  j["offsets"] = nlohmann::json::array();
  for (Eigen::Index i = 0; i < planes.plane_count(); ++i) {
    j["normals"].push_back({planes.normals(i, 0), planes.normals(i, 1),
                            planes.normals(i, 2)});
    j["offsets"].push_back(planes.offsets[i]);
  }
  j["frame"] = planes.frame;
  return j;
}

inline SupportPlaneSet support_plane_set_from_json(const nlohmann::json& j,
                                                   bool validate = true) {
  SupportPlaneSet planes;
  const auto& jn = j.at("normals");
  const auto& jb = j.at("offsets");
  planes.normals.resize(static_cast<Eigen::Index>(jn.size()), 3);
  planes.offsets.resize(static_cast<Eigen::Index>(jb.size()));
  for (size_t i = 0; i < jn.size(); ++i) {
    for (int k = 0; k < 3; ++k)
      planes.normals(static_cast<Eigen::Index>(i), k) = jn[i][static_cast<size_t>(k)].get<double>();
  }
  for (size_t i = 0; i < jb.size(); ++i)
    planes.offsets[static_cast<Eigen::Index>(i)] = jb[i].get<double>();
  planes.frame = j.value("frame", "object");
  if (validate) validate_support_plane_set(planes);
  return planes;
}

// OFF text format: header, "nv nf ne", vertex lines, then polygonal faces
// which are fan-triangulated.
inline std::pair<std::vector<Vector3d>, std::vector<std::array<int, 3>>>
load_off_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open OFF file: " + path);
  std::string token;
  in >> token;
  if (token != "OFF") throw std::runtime_error("not an OFF file: " + path);
  size_t nv = 0, nf = 0, ne = 0;
  in >> nv >> nf >> ne;
  std::vector<Vector3d> vertices(nv);
  for (size_t i = 0; i < nv; ++i) in >> vertices[i][0] >> vertices[i][1] >> vertices[i][2];
  std::vector<std::array<int, 3>> faces;
  for (size_t i = 0; i < nf; ++i) {
    int cnt = 0;
    in >> cnt;
    std::vector<int> idx(static_cast<size_t>(cnt));
    for (int k = 0; k < cnt; ++k) in >> idx[static_cast<size_t>(k)];
    for (int k = 1; k + 1 < cnt; ++k)
      faces.push_back({idx[0], idx[static_cast<size_t>(k)],
                       idx[static_cast<size_t>(k + 1)]});
  }
  if (!in) throw std::runtime_error("truncated OFF file: " + path);
  return {std::move(vertices), std::move(faces)};
}

}  // namespace contactsdf
