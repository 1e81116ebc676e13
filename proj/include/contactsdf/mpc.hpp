#pragma once

// Receding-horizon control through the explicit smoothed contact model.
// Direct single shooting over T controls with an adjoint gradient and
// projected-gradient/backtracking iterations under box bounds. The dual cone
// is frozen at the query state for the whole horizon, so the per-step
// velocity depends on that step's control only.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <set>
#include <vector>

#include <json.hpp>

#include "contactsdf/quaternion.hpp"
#include "contactsdf/stepper.hpp"

namespace contactsdf {

struct MpcConfig {
  int horizon = 4;
  VectorXd u_lb, u_ub;
  double w_contact = 1.0;
  double w_grasp = 0.1;
  double w_u = 1.0;
  double w_p = 10000.0;
  double w_q = 1000.0;
  Vector3d target_position = Vector3d::Zero();
  Vector4d target_quaternion = Vector4d(1, 0, 0, 0);
  int max_iters = 50;
  double step_tolerance = 1e-6;
  bool grasp_cost_enabled = true;

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (u_lb.size() != u_ub.size())
      throw std::invalid_argument("u bound dimension mismatch");
    if ((u_lb.array() > u_ub.array()).any())
      throw std::invalid_argument("u_lb must be <= u_ub");
    if (w_contact < 0 || w_grasp < 0 || w_u < 0 || w_p < 0 || w_q < 0)
      throw std::invalid_argument("cost weights must be nonnegative");
    if (std::abs(target_quaternion.norm() - 1.0) > 1e-6)
      throw std::invalid_argument("target quaternion must be unit");
  }
};

inline nlohmann::json to_json(const MpcConfig& c) {
  nlohmann::json j;
  j["horizon"] = c.horizon;
  j["u_lb"] = std::vector<double>(c.u_lb.data(), c.u_lb.data() + c.u_lb.size());
  j["u_ub"] = std::vector<double>(c.u_ub.data(), c.u_ub.data() + c.u_ub.size());
  j["w_contact"] = c.w_contact;
  j["w_grasp"] = c.w_grasp;
  j["w_u"] = c.w_u;
  j["w_p"] = c.w_p;
  j["w_q"] = c.w_q;
  j["target_position"] = {c.target_position[0], c.target_position[1],
                          c.target_position[2]};
  j["target_quaternion"] = {c.target_quaternion[0], c.target_quaternion[1],
                            c.target_quaternion[2], c.target_quaternion[3]};
  j["max_iters"] = c.max_iters;
  j["step_tolerance"] = c.step_tolerance;
  j["grasp_cost_enabled"] = c.grasp_cost_enabled;
  return j;
}

inline MpcConfig mpc_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "horizon", "u_lb", "u_ub", "w_contact", "w_grasp", "w_u", "w_p", "w_q",
      "target_position", "target_quaternion", "max_iters", "step_tolerance",
      "grasp_cost_enabled"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key()))
      throw std::invalid_argument("unknown MpcConfig key: " + it.key());
  }
  MpcConfig c;
  c.horizon = j.value("horizon", c.horizon);
  auto read_vec = [&](const char* key, VectorXd& out) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    out.resize(static_cast<Eigen::Index>(a.size()));
    for (size_t i = 0; i < a.size(); ++i)
      out[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  };
  read_vec("u_lb", c.u_lb);
  read_vec("u_ub", c.u_ub);
  c.w_contact = j.value("w_contact", c.w_contact);
  c.w_grasp = j.value("w_grasp", c.w_grasp);
  c.w_u = j.value("w_u", c.w_u);
  c.w_p = j.value("w_p", c.w_p);
  c.w_q = j.value("w_q", c.w_q);
  if (j.contains("target_position"))
    for (int k = 0; k < 3; ++k)
      c.target_position[k] = j.at("target_position")[static_cast<size_t>(k)];
  if (j.contains("target_quaternion"))
    for (int k = 0; k < 4; ++k)
      c.target_quaternion[k] = j.at("target_quaternion")[static_cast<size_t>(k)];
  c.max_iters = j.value("max_iters", c.max_iters);
  c.step_tolerance = j.value("step_tolerance", c.step_tolerance);
  c.grasp_cost_enabled = j.value("grasp_cost_enabled", c.grasp_cost_enabled);
  return c;
}

struct MpcSolution {
  MatrixXd controls;  // horizon x n_r
  std::vector<SystemState> predicted_states;
  double objective = 0.0;
  int iterations = 0;
  double solve_time_s = 0.0;
  bool hit_iteration_limit = false;
};

// ---------------------------------------------------------------------------
// Costs

// Path cost: contact attraction, grasp closure, control effort. Ball
// positions are consecutive 3-vectors of the robot configuration.
inline double path_cost(const SystemState& state, const VectorXd& u,
                        const MpcConfig& config) {
  const Eigen::Index n_balls = state.robot_config.size() / 3;
  double contact = 0.0;
  Vector3d closure = Vector3d::Zero();
  for (Eigen::Index k = 0; k < n_balls; ++k) {
    const Vector3d e =
        Vector3d(state.robot_config.segment(3 * k, 3)) - state.object_position;
    contact += e.squaredNorm();
    const double len = e.norm();
    if (len >= 1e-6) closure += e / len;  // coincident balls contribute zero
  }
  double cost = config.w_contact * contact + config.w_u * u.squaredNorm();
  if (config.grasp_cost_enabled && config.w_grasp > 0.0) {
    // The common rotation into the object frame drops out of the norm.
    cost += config.w_grasp * closure.squaredNorm();
  }
  return cost;
}

inline double terminal_cost(const SystemState& state, const MpcConfig& config) {
  const double dot = state.object_quaternion.dot(config.target_quaternion);
  return config.w_p *
             (state.object_position - config.target_position).squaredNorm() +
         config.w_q * (1.0 - dot * dot);
}

namespace detail {

// Gradients over the flattened state [p(3), quat(4), q_r(n_r)].
inline VectorXd path_cost_state_gradient(const SystemState& state,
                                         const MpcConfig& config) {
  const Eigen::Index n_r = state.robot_config.size();
  const Eigen::Index n_balls = n_r / 3;
  VectorXd g = VectorXd::Zero(7 + n_r);

  Vector3d closure = Vector3d::Zero();
  std::vector<Vector3d> unit(static_cast<size_t>(n_balls), Vector3d::Zero());
  std::vector<double> len(static_cast<size_t>(n_balls), 0.0);
  for (Eigen::Index k = 0; k < n_balls; ++k) {
    const Vector3d e =
        Vector3d(state.robot_config.segment(3 * k, 3)) - state.object_position;
    const Vector3d grad_contact = 2.0 * config.w_contact * e;
    g.segment<3>(0) -= grad_contact;
    g.segment(7 + 3 * k, 3) += grad_contact;
    len[static_cast<size_t>(k)] = e.norm();
    if (len[static_cast<size_t>(k)] >= 1e-6) {
      unit[static_cast<size_t>(k)] = e / len[static_cast<size_t>(k)];
      closure += unit[static_cast<size_t>(k)];
    }
  }
  if (config.grasp_cost_enabled && config.w_grasp > 0.0) {
    for (Eigen::Index k = 0; k < n_balls; ++k) {
      if (len[static_cast<size_t>(k)] < 1e-6) continue;
      const Vector3d& uk = unit[static_cast<size_t>(k)];
      const Vector3d grad_e = 2.0 * config.w_grasp *
                              (closure - uk * uk.dot(closure)) /
                              len[static_cast<size_t>(k)];
      g.segment<3>(0) -= grad_e;
      g.segment(7 + 3 * k, 3) += grad_e;
    }
  }
  return g;
}

inline VectorXd terminal_cost_state_gradient(const SystemState& state,
                                             const MpcConfig& config) {
  const Eigen::Index n_r = state.robot_config.size();
  VectorXd g = VectorXd::Zero(7 + n_r);
  g.segment<3>(0) =
      2.0 * config.w_p * (state.object_position - config.target_position);
  const double dot = state.object_quaternion.dot(config.target_quaternion);
  g.segment<4>(3) = -2.0 * config.w_q * dot * config.target_quaternion;
  return g;
}

// Jacobians of the integration map over the flattened state.
struct IntegrateJacobians {
  MatrixXd dstate;     // (7+n_r) x (7+n_r)
  MatrixXd dvelocity;  // (7+n_r) x (6+n_r)
};

inline IntegrateJacobians integrate_jacobians(const SystemState& state,
                                              const VectorXd& v, double h) {
  const Eigen::Index n_r = state.robot_config.size();
  IntegrateJacobians jac;
  jac.dstate = MatrixXd::Zero(7 + n_r, 7 + n_r);
  jac.dvelocity = MatrixXd::Zero(7 + n_r, 6 + n_r);
  jac.dstate.block<3, 3>(0, 0) = Matrix3d::Identity();
  jac.dvelocity.block<3, 3>(0, 0) = h * Matrix3d::Identity();
  for (Eigen::Index i = 0; i < n_r; ++i) {
    jac.dstate(7 + i, 7 + i) = 1.0;
    jac.dvelocity(7 + i, 6 + i) = h;
  }
  const Vector3d theta = h * v.segment<3>(3);
  const Vector4d delta = quat_exp<double>(theta);
  const Vector4d y = quat_multiply<double>(state.object_quaternion, delta);
  const Eigen::Matrix4d dnorm = quat_normalize_jacobian(y);
  jac.dstate.block<4, 4>(3, 3) = dnorm * quat_right_matrix(delta);
  jac.dvelocity.block<4, 3>(3, 3) =
      dnorm * quat_left_matrix(state.object_quaternion) *
      quat_exp_jacobian(theta) * h;
  return jac;
}

}  // namespace detail

// Per-control-step velocity model with the contact data frozen at the query
// state. Both the smoothed step and the relaxed-KKT baseline expose the same
// surface so the MPC and rollout harness are shared.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual VectorXd velocity(const VectorXd& u) const = 0;
  virtual MatrixXd velocity_jacobian(const VectorXd& u) const = 0;
  double h = 0.1;
};

class DsdfStepModel final : public StepModel {
 public:
  DsdfStepModel(const ModelParams& params, const ContactSet& contacts)
      : params_(params), base_(assemble_Q_b(params, VectorXd::Zero(params.robot_dim()))) {
    h = params.h;
    cone_ = build_dual_cone(contacts, base_);
  }

  VectorXd velocity(const VectorXd& u) const override {
    QuadraticModel<double> m = base_;
    m.b.tail(u.size()) = params_.K_r_diag.cwiseProduct(u) + params_.tau_r;
    return step_velocity_with_cone(m, cone_, params_.sigma);
  }

  MatrixXd velocity_jacobian(const VectorXd& u) const override {
    QuadraticModel<double> m = base_;
    m.b.tail(u.size()) = params_.K_r_diag.cwiseProduct(u) + params_.tau_r;
    return step_velocity_control_jacobian(m, cone_, params_.sigma,
                                          params_.K_r_diag);
  }

  const DualCone& cone() const { return cone_; }

 private:
  ModelParams params_;
  QuadraticModel<double> base_;
  DualCone cone_;
};

class RelaxedQpStepModel final : public StepModel {
 public:
  RelaxedQpStepModel(const ModelParams& params, const ContactSet& contacts,
                     double epsilon)
      : params_(params),
        base_(assemble_Q_b(params, VectorXd::Zero(params.robot_dim()))),
        epsilon_(epsilon) {
    h = params.h;
    if (!contacts.empty()) {
      auto [jac, phi] = contacts.stacked_rows();
      jac_ = jac;
      phi_ = phi;
    } else {
      jac_.resize(0, base_.dim());
      phi_.resize(0);
    }
  }

  VectorXd velocity(const VectorXd& u) const override {
    QuadraticModel<double> m = base_;
    m.b.tail(u.size()) = params_.K_r_diag.cwiseProduct(u) + params_.tau_r;
    return qp_relaxed_kkt_step_rows(m, jac_, phi_, epsilon_).v;
  }

  MatrixXd velocity_jacobian(const VectorXd& u) const override {
    QuadraticModel<double> m = base_;
    m.b.tail(u.size()) = params_.K_r_diag.cwiseProduct(u) + params_.tau_r;
    auto sol = qp_relaxed_kkt_step_rows(m, jac_, phi_, epsilon_);
    return relaxed_step_control_jacobian(m, jac_, sol, params_.K_r_diag);
  }

 private:
  ModelParams params_;
  QuadraticModel<double> base_;
  MatrixXd jac_;
  VectorXd phi_;
  double epsilon_;
};

// ---------------------------------------------------------------------------
// Objective, adjoint gradient, solver

inline double rollout_objective(const SystemState& q0, const MatrixXd& controls,
                                const StepModel& model, const MpcConfig& config,
                                std::vector<SystemState>* states_out = nullptr) {
  SystemState state = q0;
  double objective = 0.0;
  if (states_out) {
    states_out->clear();
    states_out->push_back(state);
  }
  for (int t = 0; t < config.horizon; ++t) {
    const VectorXd u = controls.row(t);
    objective += path_cost(state, u, config);
    state = integrate(state, model.velocity(u), model.h);
    if (states_out) states_out->push_back(state);
  }
  objective += terminal_cost(state, config);
  return objective;
}

inline MatrixXd rollout_gradient(const SystemState& q0, const MatrixXd& controls,
                                 const StepModel& model,
                                 const MpcConfig& config) {
  const int T = config.horizon;
  const Eigen::Index n_r = q0.robot_config.size();

  std::vector<SystemState> states(static_cast<size_t>(T) + 1);
  std::vector<VectorXd> velocities(static_cast<size_t>(T));
  states[0] = q0;
  for (int t = 0; t < T; ++t) {
    velocities[static_cast<size_t>(t)] = model.velocity(controls.row(t));
    states[static_cast<size_t>(t) + 1] =
        integrate(states[static_cast<size_t>(t)],
                  velocities[static_cast<size_t>(t)], model.h);
  }

  MatrixXd grad(T, n_r);
  VectorXd lambda =
      detail::terminal_cost_state_gradient(states[static_cast<size_t>(T)], config);
  for (int t = T - 1; t >= 0; --t) {
    const SystemState& st = states[static_cast<size_t>(t)];
    const VectorXd u = controls.row(t);
    auto jac = detail::integrate_jacobians(st, velocities[static_cast<size_t>(t)],
                                           model.h);
    const MatrixXd dv_du = model.velocity_jacobian(u);
    grad.row(t) = (2.0 * config.w_u * u +
                   dv_du.transpose() * (jac.dvelocity.transpose() * lambda))
                      .transpose();
    lambda = detail::path_cost_state_gradient(st, config) +
             jac.dstate.transpose() * lambda;
  }
  return grad;
}

inline MatrixXd clamp_controls(MatrixXd controls, const MpcConfig& config) {
  for (int t = 0; t < controls.rows(); ++t) {
    controls.row(t) = controls.row(t)
                          .cwiseMax(config.u_lb.transpose())
                          .cwiseMin(config.u_ub.transpose());
  }
  return controls;
}

inline MpcSolution solve_mpc(const SystemState& q0, const StepModel& model,
                             const MpcConfig& config,
                             const MatrixXd* warm_start = nullptr) {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const int T = config.horizon;
  const Eigen::Index n_r = q0.robot_config.size();

  MatrixXd u = warm_start ? clamp_controls(*warm_start, config)
                          : clamp_controls(MatrixXd::Zero(T, n_r), config);
  double objective = rollout_objective(q0, u, model, config);
  if (!std::isfinite(objective))
    throw NonFiniteObjective("MPC objective is not finite at the warm start");

  double step_scale = -1.0;
  int iter = 0;
  bool hit_limit = true;
  for (; iter < config.max_iters; ++iter) {
    MatrixXd grad = rollout_gradient(q0, u, model, config);
    if (!grad.allFinite())
      throw NonFiniteObjective("MPC gradient is not finite");

    // Projected-gradient stationarity.
    MatrixXd projected = clamp_controls(u - grad, config);
    const double stationarity = (u - projected).cwiseAbs().maxCoeff();
    if (stationarity < config.step_tolerance) {
      hit_limit = false;
      break;
    }

    if (step_scale <= 0.0) {
      const double gnorm = grad.cwiseAbs().maxCoeff();
      const double span = (config.u_ub - config.u_lb).cwiseAbs().maxCoeff();
      step_scale = gnorm > 0 ? 0.25 * span / gnorm : 1.0;
    } else {
      step_scale *= 2.0;
    }

    bool accepted = false;
    for (int back = 0; back < 40; ++back) {
      MatrixXd candidate = clamp_controls(u - step_scale * grad, config);
      const double cand_obj = rollout_objective(q0, candidate, model, config);
      if (!std::isfinite(cand_obj))
        throw NonFiniteObjective("MPC objective is not finite");
      const double decrease =
          (grad.array() * (u - candidate).array()).sum();
      if (cand_obj <= objective - 1e-4 * decrease + 1e-15) {
        u = candidate;
        objective = cand_obj;
        accepted = true;
        break;
      }
      step_scale *= 0.5;
    }
    if (!accepted) {
      hit_limit = false;  // no further progress along the gradient
      break;
    }
  }

  MpcSolution sol;
  sol.controls = u;
  sol.objective = rollout_objective(q0, u, model, config, &sol.predicted_states);
  sol.iterations = iter;
  sol.hit_iteration_limit = hit_limit;
  sol.solve_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return sol;
}

// Shift-and-repeat warm start from the previous receding-horizon solution.
inline MatrixXd shift_warm_start(const MatrixXd& previous) {
  MatrixXd shifted = previous;
  if (previous.rows() > 1) {
    shifted.topRows(previous.rows() - 1) = previous.bottomRows(previous.rows() - 1);
  }
  return shifted;
}

enum class StepperKind { kDsdf, kRelaxedQp };

struct RolloutStepRecord {
  int step = 0;
  double solve_ms = 0.0;
  double objective = 0.0;
  double cost_to_goal = 0.0;
  double position_error = 0.0;
  double orientation_error = 0.0;
  double control_norm = 0.0;
  int contact_count = 0;
  SystemState state;     // state the solve was queried at
  VectorXd applied_control;
};

struct RolloutResult {
  std::vector<RolloutStepRecord> records;
  SystemState final_state;
  double terminal_position_error = 0.0;
  double terminal_orientation_error = 0.0;
  double mean_solve_ms = 0.0;
  double median_solve_ms = 0.0;
};

// Receding horizon: detect at the real state, freeze the cone, solve, apply
// the first control. `Env` provides state() and step(u); the detector maps a
// state to the model-side ContactSet.
template <typename Env>
RolloutResult receding_horizon_rollout(
    Env& env, const ModelParams& params, const MpcConfig& config, int H,
    StepperKind kind,
    const std::function<ContactSet(const SystemState&)>& detector,
    double epsilon = 1e-4) {
  RolloutResult result;
  MatrixXd warm = MatrixXd::Zero(config.horizon, params.robot_dim());
  for (int k = 0; k < H; ++k) {
    const SystemState state = env.state();
    ContactSet contacts;
    try {
      contacts = detector(state);
    } catch (const std::exception& e) {
      throw std::runtime_error("rollout step " + std::to_string(k) +
                               ": " + e.what());
    }
    std::unique_ptr<StepModel> model;
    if (kind == StepperKind::kDsdf) {
      model = std::make_unique<DsdfStepModel>(params, contacts);
    } else {
      model = std::make_unique<RelaxedQpStepModel>(params, contacts, epsilon);
    }
    MatrixXd warm_shifted = shift_warm_start(warm);
    MpcSolution sol;
    try {
      sol = solve_mpc(state, *model, config, &warm_shifted);
    } catch (const std::exception& e) {
      throw std::runtime_error("rollout step " + std::to_string(k) +
                               ": " + e.what());
    }
    warm = sol.controls;

    RolloutStepRecord rec;
    rec.step = k;
    rec.solve_ms = sol.solve_time_s * 1e3;
    rec.objective = sol.objective;
    rec.cost_to_goal = terminal_cost(state, config);
    rec.position_error = (state.object_position - config.target_position).norm();
    rec.orientation_error =
        quat_angle_between(state.object_quaternion, config.target_quaternion);
    rec.control_norm = sol.controls.row(0).norm();
    rec.contact_count = static_cast<int>(contacts.contact_count());
    rec.state = state;
    rec.applied_control = sol.controls.row(0);
    result.records.push_back(std::move(rec));

    env.step(sol.controls.row(0).transpose());
  }
  result.final_state = env.state();
  result.terminal_position_error =
      (result.final_state.object_position - config.target_position).norm();
  result.terminal_orientation_error = quat_angle_between(
      result.final_state.object_quaternion, config.target_quaternion);
  if (!result.records.empty()) {
    std::vector<double> times;
    for (const auto& r : result.records) {
      result.mean_solve_ms += r.solve_ms / static_cast<double>(result.records.size());
      times.push_back(r.solve_ms);
    }
    std::sort(times.begin(), times.end());
    result.median_solve_ms = times[times.size() / 2];
  }
  return result;
}

}  // namespace contactsdf
