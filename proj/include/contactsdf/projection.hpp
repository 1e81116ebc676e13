#pragma once

// Exact Euclidean projection onto a polyhedron {x : A x + b <= 0}.
// Goldfarb-Idnani style dual active set specialized to a unit Hessian: start
// from the query point, repeatedly enforce the most violated plane, and take
// dual-only steps (dropping blocking rows) whenever the new normal is
// linearly dependent on the working set. The working set stays independent,
// so every subproblem solve is nonsingular.

#include <vector>

#include "contactsdf/types.hpp"

namespace contactsdf {

struct ProjectionResult {
  VectorXd point;         // projection of the query onto the set
  double distance = 0.0;  // ||point - query||
  VectorXd multipliers;   // one per row, >= 0, complementary with the slacks
  int iterations = 0;
  bool converged = false;
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
  double max() const {
    return std::max(std::max(stationarity, primal),
                    std::max(dual, complementarity));
  }
};

inline KktResiduals projection_kkt_residuals(const MatrixXd& normals,
                                             const VectorXd& offsets,
                                             const VectorXd& query,
                                             const VectorXd& point,
                                             const VectorXd& multipliers) {
  KktResiduals r;
  VectorXd slack = normals * point + offsets;
  r.stationarity =
      (point - query + normals.transpose() * multipliers).cwiseAbs().maxCoeff();
  r.primal = slack.size() ? std::max(0.0, slack.maxCoeff()) : 0.0;
  r.dual = multipliers.size() ? std::max(0.0, -multipliers.minCoeff()) : 0.0;
  r.complementarity = slack.size()
                          ? multipliers.cwiseProduct(slack).cwiseAbs().maxCoeff()
                          : 0.0;
  return r;
}

inline ProjectionResult project_onto_polyhedron(const MatrixXd& normals,
                                                const VectorXd& offsets,
                                                const VectorXd& query,
                                                int max_iterations = 400,
                                                double tolerance = 1e-11) {
  const Eigen::Index m = normals.rows();
  const Eigen::Index dim = query.size();

  ProjectionResult result;
  result.multipliers = VectorXd::Zero(m);
  result.point = query;
  if (m == 0) {
    result.converged = true;
    return result;
  }

  const double scale =
      std::max({1.0, query.cwiseAbs().maxCoeff(),
                offsets.cwiseAbs().maxCoeff()});
  const double viol_tol = tolerance * scale;

  std::vector<Eigen::Index> working;  // linearly independent active rows
  std::vector<char> in_working(static_cast<size_t>(m), 0);
  VectorXd lambda = VectorXd::Zero(m);
  VectorXd x = query;

  int iter = 0;
  bool converged = false;
  while (iter < max_iterations) {
    // Most violated plane outside the working set (working rows sit at zero
    // by construction).
    Eigen::Index p = -1;
    double viol = viol_tol;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (in_working[static_cast<size_t>(i)]) continue;
      const double v = normals.row(i).dot(x) + offsets[i];
      if (v > viol) {
        viol = v;
        p = i;
      }
    }
    if (p < 0) {
      converged = true;
      break;
    }

    const VectorXd a_new = normals.row(p).transpose();
    double lambda_new = 0.0;

    // Enforce plane p, shrinking the working set as rows block.
    while (iter < max_iterations) {
      ++iter;
      const Eigen::Index k = static_cast<Eigen::Index>(working.size());
      VectorXd r(k);
      VectorXd z = a_new;
      if (k > 0) {
        MatrixXd aw(k, dim);
        for (Eigen::Index i = 0; i < k; ++i)
          aw.row(i) = normals.row(working[static_cast<size_t>(i)]);
        MatrixXd gram = aw * aw.transpose();
        r = gram.ldlt().solve(aw * a_new);
        z -= aw.transpose() * r;
      }

      const double z_sq = z.squaredNorm();
      const double viol_now = normals.row(p).dot(x) + offsets[p];
      double t_full = std::numeric_limits<double>::infinity();
      if (z_sq > 1e-12) t_full = viol_now / z_sq;

      double t_block = std::numeric_limits<double>::infinity();
      Eigen::Index blocker = -1;
      for (Eigen::Index i = 0; i < k; ++i) {
        if (r[i] > 1e-14) {
          const double t = lambda[working[static_cast<size_t>(i)]] / r[i];
          if (t < t_block) {
            t_block = t;
            blocker = i;
          }
        }
      }

      const double t = std::min(t_full, t_block);
      if (!std::isfinite(t)) {
        // No primal direction and no dual room: the plane set is infeasible.
        result.iterations = iter;
        return result;
      }
      if (z_sq > 1e-12) x -= t * z;
      for (Eigen::Index i = 0; i < k; ++i)
        lambda[working[static_cast<size_t>(i)]] -= t * r[i];
      lambda_new += t;

      if (t_block < t_full) {
        const Eigen::Index dropped = working[static_cast<size_t>(blocker)];
        lambda[dropped] = 0.0;
        in_working[static_cast<size_t>(dropped)] = 0;
        working.erase(working.begin() + blocker);
        continue;
      }
      lambda[p] = lambda_new;
      working.push_back(p);
      in_working[static_cast<size_t>(p)] = 1;
      break;
    }
  }

  result.converged = converged;
  result.iterations = iter;
  result.point = x;
  result.distance = (x - query).norm();
  result.multipliers = lambda;
  return result;
}

}  // namespace contactsdf
