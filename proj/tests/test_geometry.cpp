#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "contactsdf/geometry.hpp"
#include "oracles.hpp"

using namespace contactsdf;
using namespace testsupport;

namespace {

SupportPlaneSet single_plane(const Vector3d& n, double b) {
  SupportPlaneSet p;
  p.normals.resize(1, 3);
  p.normals.row(0) = n;
  p.offsets.resize(1);
  p.offsets[0] = b;
  return p;
}

}  // namespace

TEST_CASE("cube mesh builds one outward plane per face") {
  auto planes = cube_planes(0.5);
  REQUIRE(planes.plane_count() == 6);
  // Every axis direction present with offset -0.5.
  for (int axis = 0; axis < 3; ++axis) {
    for (int sign : {-1, 1}) {
      bool found = false;
      for (Eigen::Index i = 0; i < 6; ++i) {
        Vector3d n = planes.normals.row(i);
        if ((n - sign * Vector3d::Unit(axis)).norm() < 1e-12 &&
            std::abs(planes.offsets[i] + 0.5) < 1e-12) {
          found = true;
        }
      }
      REQUIRE(found);
    }
  }
}

TEST_CASE("tetrahedron yields four planes") {
  std::vector<Vector3d> v = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  std::vector<std::array<int, 3>> f = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
  auto planes = build_from_mesh(v, f);
  REQUIRE(planes.plane_count() == 4);
  for (const Vector3d& vert : v) {
    REQUIRE((planes.normals * vert + planes.offsets).maxCoeff() <= 1e-8);
  }
}

TEST_CASE("coplanar duplicate triangles merge to one plane") {
  auto [v, f] = cube_mesh(0.5);
  REQUIRE(f.size() == 12);  // two triangles per face
  auto planes = build_from_mesh(v, f);
  REQUIRE(planes.plane_count() == 6);
}

TEST_CASE("non-convex mesh is rejected") {
  auto [v, f] = cube_mesh(0.5);
  v[0] = Vector3d(-0.2, -0.2, -0.2);  // dent one corner inward
  REQUIRE_THROWS_AS(build_from_mesh(v, f), NonConvexMesh);
}

TEST_CASE("degenerate meshes are rejected") {
  std::vector<Vector3d> flat = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  std::vector<std::array<int, 3>> f = {{0, 1, 2}, {1, 3, 2}};
  REQUIRE_THROWS_AS(build_from_mesh(flat, f), DegenerateMesh);
  std::vector<Vector3d> few = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  REQUIRE_THROWS_AS(build_from_mesh(few, {{0, 1, 2}}), DegenerateMesh);
}

TEST_CASE("unbounded plane sets are rejected") {
  SupportPlaneSet open_box;
  open_box.normals.resize(5, 3);
  open_box.normals << 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1;
  open_box.offsets = VectorXd::Constant(5, -0.5);
  REQUIRE_THROWS_AS(validate_support_plane_set(open_box), DegenerateMesh);
}

TEST_CASE("exact distance on the cube matches closed forms") {
  auto planes = cube_planes(0.5);

  auto face = exact_distance(planes, Vector3d(2, 0, 0));
  REQUIRE(face.distance == Catch::Approx(1.5).margin(1e-9));
  REQUIRE((face.closest_point - Vector3d(0.5, 0, 0)).norm() < 1e-8);

  auto inside = exact_distance(planes, Vector3d(0, 0, 0));
  REQUIRE(inside.distance == Catch::Approx(0.0).margin(1e-9));
  REQUIRE((inside.closest_point - Vector3d(0, 0, 0)).norm() < 1e-9);

  auto corner = exact_distance(planes, Vector3d(1, 1, 1));
  REQUIRE(corner.distance == Catch::Approx(std::sqrt(3.0) * 0.5).margin(1e-9));
  REQUIRE((corner.closest_point - Vector3d(0.5, 0.5, 0.5)).norm() < 1e-8);
}

TEST_CASE("projection agrees with Dykstra and satisfies KKT on random polytopes") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    auto planes = random_polytope(rng, 12 + trial);
    Vector3d x = 1.2 * random_unit_vector(rng);
    ProjectionResult pr =
        project_onto_polyhedron(planes.normals, planes.offsets, x);
    REQUIRE(pr.converged);
    VectorXd ref = dykstra_projection(planes.normals, planes.offsets, x);
    REQUIRE((pr.point - ref).norm() < 1e-5);
    auto kkt = projection_kkt_residuals(planes.normals, planes.offsets, x,
                                        pr.point, pr.multipliers);
    REQUIRE(kkt.max() < 1e-8);
    // Feasibility of the closest point.
    REQUIRE((planes.normals * pr.point + planes.offsets).maxCoeff() < 1e-6);
  }
}

TEST_CASE("exact distance is invariant under rigid transforms") {
  std::mt19937_64 rng(7);
  auto planes = random_polytope(rng, 16);
  for (int trial = 0; trial < 10; ++trial) {
    Vector3d x = random_exterior_point(rng, planes);
    const double d0 = exact_distance(planes, x).distance;

    Matrix3d rot = quat_to_rotation<double>(random_unit_quaternion(rng));
    Vector3d t = random_unit_vector(rng);
    SupportPlaneSet moved = planes;
    for (Eigen::Index i = 0; i < planes.plane_count(); ++i) {
      Vector3d n = planes.normals.row(i);
      Vector3d n2 = rot * n;
      moved.normals.row(i) = n2;
      moved.offsets[i] = planes.offsets[i] - n2.dot(t);
    }
    const double d1 = exact_distance(moved, rot * x + t).distance;
    REQUIRE(std::abs(d0 - d1) < 1e-9);
  }
}

TEST_CASE("csdf closed forms on a single plane") {
  auto plane = single_plane(Vector3d(1, 0, 0), -0.5);
  REQUIRE(csdf(plane, Vector3d(2, 0, 0), 100.0) ==
          Catch::Approx(1.5).margin(1e-6));
  for (double sigma : {10.0, 100.0, 1000.0}) {
    REQUIRE(csdf(plane, Vector3d(0.5, 0, 0), sigma) ==
            Catch::Approx(std::log(2.0) / sigma).margin(1e-15));
  }
}

TEST_CASE("csdf approaches the exact oracle on the cube face region") {
  auto planes = cube_planes(0.5);
  const double exact = exact_distance(planes, Vector3d(2, 0, 0)).distance;
  REQUIRE(std::abs(csdf(planes, Vector3d(2, 0, 0), 1000.0) - exact) < 1e-2);
}

TEST_CASE("csdf is strictly positive everywhere") {
  std::mt19937_64 rng(3);
  auto planes = cube_planes(0.5);
  std::uniform_real_distribution<double> coord(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Vector3d x(coord(rng), coord(rng), coord(rng));
    for (double sigma : {10.0, 100.0, 1000.0}) {
      REQUIRE(csdf(planes, x, sigma) > 0.0);
    }
  }
}

TEST_CASE("csdf error above max-approx is bounded and non-increasing in sigma") {
  std::mt19937_64 rng(11);
  const std::vector<double> sigmas = {10, 50, 100, 500, 1000};
  for (int trial = 0; trial < 10; ++trial) {
    auto planes = random_polytope(rng, 10 + 3 * trial);
    const double bound_count = std::log(static_cast<double>(planes.plane_count()) + 1.0);
    Vector3d x = random_exterior_point(rng, planes);
    const double envelope = max_approx_distance(planes, x);
    double prev = std::numeric_limits<double>::infinity();
    for (double sigma : sigmas) {
      const double err = csdf(planes, x, sigma) - envelope;
      REQUIRE(err >= 0.0);
      REQUIRE(err <= bound_count / sigma + 1e-12);
      REQUIRE(err <= prev + 1e-12);
      prev = err;
    }
  }
}

TEST_CASE("csdf gradient closed forms") {
  auto plane = single_plane(Vector3d(1, 0, 0), -0.5);
  Vector3d g = csdf_gradient(plane, Vector3d(2, 0, 0), 100.0);
  REQUIRE((g - Vector3d(1, 0, 0)).norm() < 1e-6);

  auto planes = cube_planes(0.5);
  REQUIRE(csdf_gradient(planes, Vector3d(0, 0, 0), 100.0).norm() < 1e-3);
}

TEST_CASE("csdf gradient matches central finite differences") {
  std::mt19937_64 rng(19);
  int checked = 0;
  while (checked < 100) {
    auto planes = random_polytope(rng, 20);
    Vector3d x = random_exterior_point(rng, planes, 1e-3);
    const double sigma = 200.0;
    Vector3d analytic = csdf_gradient(planes, x, sigma);
    VectorXd fd = central_gradient(
        [&](const VectorXd& p) {
          return csdf(planes, Vector3d(p), sigma);
        },
        x, 1e-6);
    REQUIRE(relative_error(analytic, fd) < 1e-5);
    ++checked;
  }
}

TEST_CASE("approximate closest point against the exact oracle") {
  auto plane = single_plane(Vector3d(1, 0, 0), -0.5);
  Vector3d cp = closest_point_approx(plane, Vector3d(2, 0, 0), 500.0);
  REQUIRE((cp - Vector3d(0.5, 0, 0)).norm() < 1e-3);

  auto planes = cube_planes(0.5);
  // Interior query: csdf is ~ ln(7)/sigma, displacement stays bounded.
  Vector3d inside = closest_point_approx(planes, Vector3d(0.05, 0, 0), 100.0);
  REQUIRE((inside - Vector3d(0.05, 0, 0)).norm() < 1e-2);

  // Face-region queries recover the oracle's projection point.
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> inset(-0.4, 0.4);
  std::uniform_real_distribution<double> off(0.02, 0.4);
  for (int i = 0; i < 20; ++i) {
    Vector3d x(0.5 + off(rng), inset(rng), inset(rng));
    Vector3d approx = closest_point_approx(planes, x, 1000.0);
    Vector3d oracle = exact_distance(planes, x).closest_point;
    REQUIRE((approx - oracle).norm() < 5e-3);
  }
}

TEST_CASE("closest-point formula at a cube corner follows the smoothed field") {
  // At (1,1,1) the three face margins tie at 0.5, so the smoothed closest
  // point moves along the averaged normal (1,1,1)/3 by the smoothed distance
  // (0.5 + ln(3)/sigma). The oracle corner (0.5,0.5,0.5) is NOT recovered;
  // this pins the verbatim formula behavior instead.
  auto planes = cube_planes(0.5);
  const double sigma = 1000.0;
  const double dist = 0.5 + std::log(3.0) / sigma;
  Vector3d expected = Vector3d::Ones() - dist / 3.0 * Vector3d::Ones();
  Vector3d cp = closest_point_approx(planes, Vector3d(1, 1, 1), sigma);
  REQUIRE((cp - expected).norm() < 1e-4);
  REQUIRE((cp - Vector3d(0.5, 0.5, 0.5)).norm() > 0.5);
}

TEST_CASE("gradient-norm diagnostics are reported") {
  auto planes = cube_planes(0.5);
  auto diag = csdf_diagnostics(planes, Vector3d(2, 0, 0), 1000.0);
  REQUIRE(diag.gradient_norm == Catch::Approx(diag.gradient.norm()));
  REQUIRE(diag.gradient_norm == Catch::Approx(1.0).margin(1e-6));
  auto corner = csdf_diagnostics(planes, Vector3d(1, 1, 1), 1000.0);
  REQUIRE(corner.gradient_norm == Catch::Approx(1.0 / std::sqrt(3.0)).margin(1e-3));
}

TEST_CASE("plane sets round-trip through JSON") {
  auto planes = cube_planes(0.5);
  nlohmann::json j = to_json(planes);
  REQUIRE(j.at("frame") == "object");
  auto back = support_plane_set_from_json(j);
  REQUIRE((back.normals - planes.normals).cwiseAbs().maxCoeff() < 1e-15);
  REQUIRE((back.offsets - planes.offsets).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("OFF meshes load and triangulate") {
  namespace fs = std::filesystem;
  fs::path path = fs::temp_directory_path() / "contactsdf_cube_test.off";
  {
    std::ofstream out(path);
    out << "OFF\n8 6 12\n";
    for (int sx : {-1, 1})
      for (int sy : {-1, 1})
        for (int sz : {-1, 1})
          out << 0.5 * sx << " " << 0.5 * sy << " " << 0.5 * sz << "\n";
    // quad faces, fan-triangulated by the loader
    out << "4 0 1 3 2\n4 4 6 7 5\n4 0 4 5 1\n4 2 3 7 6\n4 0 2 6 4\n4 1 5 7 3\n";
  }
  auto [v, f] = load_off_mesh(path.string());
  REQUIRE(v.size() == 8);
  REQUIRE(f.size() == 12);
  auto planes = build_from_mesh(v, f);
  REQUIRE(planes.plane_count() == 6);
  std::remove(path.string().c_str());
}
