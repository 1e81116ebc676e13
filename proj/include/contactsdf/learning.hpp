#pragma once

// On-MPC parameter learning: gradient descent on the one-step prediction
// loss through the full smoothed pipeline (detection, dual cone, velocity
// step, integration). Parameters live in an unconstrained vector via smooth
// bijections; gradients come from forward-mode autodiff, with central
// finite differences as the independent oracle.

#include <deque>
#include <span>

#include "contactsdf/dual.hpp"
#include "contactsdf/mpc.hpp"
#include "contactsdf/scenes.hpp"
#include "contactsdf/stepper.hpp"

namespace contactsdf {

namespace detail {

template <typename S>
S softplus(const S& x) {
  using std::exp;
  using std::log;
  if (scalar_value(x) > 30.0) return x + log(S(1) + exp(-x));
  return log(S(1) + exp(x));
}

inline double inverse_softplus(double y) {
  // log(exp(y) - 1), stable for both small and large y.
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

}  // namespace detail

struct Transition {
  SystemState state;
  VectorXd control;
  SystemState next_state;
};

// FIFO ring of environment transitions.
class TransitionBuffer {
 public:
  explicit TransitionBuffer(size_t capacity) : capacity_(capacity) {}

  void push(Transition t) {
    entries_.push_back(std::move(t));
    if (entries_.size() > capacity_) entries_.pop_front();
  }
  size_t size() const { return entries_.size(); }
  size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const Transition& operator[](size_t i) const { return entries_[i]; }

 private:
  size_t capacity_;
  std::deque<Transition> entries_;
};

// Bijection between ModelParams and the unconstrained learning vector:
// log for the diagonal inertia, stiffness, mass and (floored) sigma,
// softplus for the friction coefficient.
struct ParamCodec {
  Eigen::Index n_r = 0;
  double h = 0.1;
  VectorXd tau_r;
  Vector3d gravity = Vector3d(0, 0, -9.81);
  double sigma_floor = 10.0;

  Eigen::Index dim() const { return 6 + n_r + 3; }

  VectorXd encode(const ModelParams& p) const {
    VectorXd theta(dim());
    for (int i = 0; i < 6; ++i) theta[i] = std::log(p.M_o(i, i));
    for (Eigen::Index i = 0; i < n_r; ++i)
      theta[6 + i] = std::log(p.K_r_diag[i]);
    theta[6 + n_r] = std::log(p.m_o);
    theta[6 + n_r + 1] = detail::inverse_softplus(p.mu);
    if (p.sigma <= sigma_floor)
      throw std::invalid_argument("sigma must exceed the floor to encode");
    theta[6 + n_r + 2] = std::log(p.sigma - sigma_floor);
    return theta;
  }

  template <typename S>
  LearnableParamsT<S> decode_t(const VecX<S>& theta) const {
    using std::exp;
    LearnableParamsT<S> p;
    p.K_r_diag.resize(n_r);
    for (int i = 0; i < 6; ++i) p.M_o_diag[i] = exp(theta[i]);
    for (Eigen::Index i = 0; i < n_r; ++i) p.K_r_diag[i] = exp(theta[6 + i]);
    p.m_o = exp(theta[6 + n_r]);
    p.mu = detail::softplus<S>(theta[6 + n_r + 1]);
    p.sigma = S(sigma_floor) + exp(theta[6 + n_r + 2]);
    p.h = h;
    p.tau_r = tau_r;
    p.gravity = gravity;
    return p;
  }

  ModelParams decode(const VectorXd& theta) const {
    LearnableParamsT<double> d = decode_t<double>(theta);
    ModelParams p;
    p.M_o = Matrix6d::Zero();
    p.M_o.diagonal() = d.M_o_diag;
    p.K_r_diag = d.K_r_diag;
    p.m_o = d.m_o;
    p.mu = d.mu;
    p.sigma = d.sigma;
    p.h = h;
    p.tau_r = tau_r;
    p.gravity = gravity;
    return p;
  }
};

// One-step prediction through the smoothed model. Query points depend on
// the state only, so repeated evaluations over a batch can reuse them.
template <typename S>
SystemStateT<S> predict_next_state_t(
    const SceneSpec& scene, const SystemState& state, const VectorXd& u,
    const LearnableParamsT<S>& params,
    const std::vector<QueryPoint>* cached_queries = nullptr) {
  std::vector<QueryPoint> local;
  if (!cached_queries) {
    local = scene_query_points(scene, state);
    cached_queries = &local;
  }
  ContactSetT<S> contacts = detect_contacts_t<S>(
      state, scene.object_planes, *cached_queries, params.sigma, params.mu,
      scene.detection);
  QuadraticModel<S> model = assemble_Q_b_t<S>(params, u);
  DualConeT<S> cone = build_dual_cone_t<S>(contacts, model);
  VecX<S> v = step_velocity_t<S>(model, cone, params.sigma);
  return integrate_t<S>(state.template cast<S>(), v, params.h);
}

inline SystemState predict_next_state(const SceneSpec& scene,
                                      const SystemState& state,
                                      const VectorXd& u,
                                      const ModelParams& params) {
  ParamCodec codec{params.robot_dim(), params.h, params.tau_r, params.gravity};
  return predict_next_state_t<double>(scene, state, u,
                                      codec.decode_t<double>(codec.encode(params)));
}

// Squared pose error: position + robot configuration plus the double-cover
// invariant rotation term 1 - (q_pred . q_real)^2.
template <typename S>
S transition_error_t(const SystemStateT<S>& predicted,
                     const SystemState& actual) {
  S err = (predicted.object_position -
           actual.object_position.template cast<S>())
              .squaredNorm();
  err += (predicted.robot_config - actual.robot_config.template cast<S>())
             .squaredNorm();
  S dot = predicted.object_quaternion.dot(
      actual.object_quaternion.template cast<S>());
  err += S(1) - dot * dot;
  return err;
}

// Per-batch cache of state-dependent query points.
struct PredictionCache {
  std::vector<std::vector<QueryPoint>> queries;

  static PredictionCache build(const SceneSpec& scene,
                               std::span<const Transition> batch) {
    PredictionCache cache;
    cache.queries.reserve(batch.size());
    for (const Transition& t : batch)
      cache.queries.push_back(scene_query_points(scene, t.state));
    return cache;
  }
};

template <typename S>
S prediction_loss_t(const SceneSpec& scene, const ParamCodec& codec,
                    const VecX<S>& theta, std::span<const Transition> batch,
                    const PredictionCache* cache = nullptr) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  LearnableParamsT<S> params = codec.decode_t<S>(theta);
  S loss = S(0);
  for (size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = batch[i];
    const std::vector<QueryPoint>* q = cache ? &cache->queries[i] : nullptr;
    SystemStateT<S> predicted =
        predict_next_state_t<S>(scene, t.state, t.control, params, q);
    loss += transition_error_t<S>(predicted, t.next_state);
  }
  return loss / S(static_cast<double>(batch.size()));
}

inline double prediction_loss(const SceneSpec& scene, const ParamCodec& codec,
                              const VectorXd& theta,
                              std::span<const Transition> batch,
                              const PredictionCache* cache = nullptr) {
  const double loss =
      prediction_loss_t<double>(scene, codec, theta, batch, cache);
  if (!std::isfinite(loss))
    throw NonFiniteLoss("prediction loss is not finite");
  return loss;
}

// Analytic gradient by forward-mode differentiation through the whole
// pipeline (detection included).
inline VectorXd prediction_loss_gradient(const SceneSpec& scene,
                                         const ParamCodec& codec,
                                         const VectorXd& theta,
                                         std::span<const Transition> batch,
                                         const PredictionCache* cache = nullptr) {
  const Eigen::Index n = theta.size();
  VecX<Dual> theta_ad(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    theta_ad[i] = Dual::seed(theta[i], n, i);
  }
  Dual loss = prediction_loss_t<Dual>(scene, codec, theta_ad, batch, cache);
  VectorXd grad = loss.grad.size() ? VectorXd(loss.grad) : VectorXd::Zero(n);
  if (!grad.allFinite())
    throw NonFiniteGradient("prediction loss gradient is not finite");
  return grad;
}

// Central-difference gradient; the test oracle for the autodiff path.
inline VectorXd prediction_loss_gradient_fd(const SceneSpec& scene,
                                            const ParamCodec& codec,
                                            const VectorXd& theta,
                                            std::span<const Transition> batch,
                                            double step = 1e-6) {
  VectorXd grad(theta.size());
  VectorXd tp = theta, tm = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    tp[i] = theta[i] + step;
    tm[i] = theta[i] - step;
    grad[i] = (prediction_loss(scene, codec, tp, batch) -
               prediction_loss(scene, codec, tm, batch)) /
              (2 * step);
    tp[i] = theta[i];
    tm[i] = theta[i];
  }
  return grad;
}

enum class GradientKind { kAnalytic, kFiniteDifference };

struct MomentumOptimizer {
  double learning_rate = 0.05;
  double momentum = 0.9;
  VectorXd velocity;

  VectorXd step(const VectorXd& theta, const VectorXd& grad) {
    if (velocity.size() != theta.size()) velocity = VectorXd::Zero(theta.size());
    velocity = momentum * velocity + grad;
    return theta - learning_rate * velocity;
  }
};

inline VectorXd update_step(const SceneSpec& scene, const ParamCodec& codec,
                            const VectorXd& theta,
                            std::span<const Transition> batch,
                            MomentumOptimizer& optimizer,
                            GradientKind kind = GradientKind::kAnalytic,
                            const PredictionCache* cache = nullptr) {
  VectorXd grad =
      kind == GradientKind::kAnalytic
          ? prediction_loss_gradient(scene, codec, theta, batch, cache)
          : prediction_loss_gradient_fd(scene, codec, theta, batch);
  return optimizer.step(theta, grad);
}

// ---------------------------------------------------------------------------
// On-MPC training loop

struct TrainingConfig {
  int rounds = 12;             // buffer-collect + update alternations
  int rollouts_per_round = 4;  // model refreshed every this many rollouts
  int rollout_length = 100;    // environment steps per rollout
  int epochs_per_round = 50;   // full-buffer updates per round
  size_t buffer_capacity = 400;
  double learning_rate = 0.05;
  double momentum = 0.9;
  uint64_t seed = 0;
  GradientKind gradient = GradientKind::kAnalytic;
};

struct TrainingResult {
  VectorXd theta;
  std::vector<double> loss_curve;          // normalized, one entry per update round
  std::vector<double> rollout_cost_curve;  // normalized accumulated c_T per rollout
  std::vector<double> raw_loss_curve;
  std::vector<double> raw_rollout_costs;
  double initial_loss_on_final_buffer = 0.0;
  double final_loss_on_final_buffer = 0.0;
  long environment_steps = 0;
};

// Alternates ContactSDF-MPC data collection (resetting the environment and
// sampling a fresh target each rollout) with epochs of gradient updates on
// the transition buffer.
inline TrainingResult on_mpc_training(EnvHandle& env, const VectorXd& theta0,
                                      const TrainingConfig& config) {
  const SceneSpec& scene = env.scene;
  ParamCodec codec{scene.true_params.robot_dim(), scene.true_params.h,
                   scene.true_params.tau_r, scene.true_params.gravity};

  TrainingResult result;
  result.theta = theta0;
  if (config.rounds == 0) return result;

  TransitionBuffer buffer(config.buffer_capacity);
  std::mt19937_64 rng(config.seed);
  MomentumOptimizer optimizer;
  optimizer.learning_rate = config.learning_rate;
  optimizer.momentum = config.momentum;

  std::vector<Transition> batch;
  PredictionCache cache;
  auto snapshot = [&]() {
    batch.assign(buffer.size(), Transition{});
    for (size_t i = 0; i < buffer.size(); ++i) batch[i] = buffer[i];
    cache = PredictionCache::build(scene, batch);
  };

  for (int round = 0; round < config.rounds; ++round) {
    ModelParams params = codec.decode(result.theta);
    for (int r = 0; r < config.rollouts_per_round; ++r) {
      env.reset();
      PoseTarget target = sample_target(scene, rng);
      MpcConfig mpc = scene.mpc_defaults;
      mpc.target_position = target.position;
      mpc.target_quaternion = target.quaternion;
      auto detector = make_model_detector(scene, params);

      MatrixXd warm = MatrixXd::Zero(mpc.horizon, codec.n_r);
      double accumulated = 0.0;
      for (int k = 0; k < config.rollout_length; ++k) {
        const SystemState state = env.state();
        DsdfStepModel model(params, detector(state));
        MatrixXd shifted = shift_warm_start(warm);
        MpcSolution sol = solve_mpc(state, model, mpc, &shifted);
        warm = sol.controls;
        Transition t;
        t.state = state;
        t.control = sol.controls.row(0);
        t.next_state = env.step(t.control);
        buffer.push(std::move(t));
        accumulated += terminal_cost(env.state(), mpc);
        ++result.environment_steps;
      }
      result.raw_rollout_costs.push_back(accumulated);
    }

    snapshot();
    for (int epoch = 0; epoch < config.epochs_per_round; ++epoch) {
      result.theta = update_step(scene, codec, result.theta, batch, optimizer,
                                 config.gradient, &cache);
    }
    result.raw_loss_curve.push_back(
        prediction_loss(scene, codec, result.theta, batch, &cache));
  }

  snapshot();
  result.initial_loss_on_final_buffer =
      prediction_loss(scene, codec, theta0, batch, &cache);
  result.final_loss_on_final_buffer =
      prediction_loss(scene, codec, result.theta, batch, &cache);

  const double loss_norm =
      result.raw_loss_curve.empty() ? 1.0 : result.raw_loss_curve.front();
  for (double v : result.raw_loss_curve)
    result.loss_curve.push_back(v / std::max(1e-300, loss_norm));
  const double cost_norm = result.raw_rollout_costs.empty()
                               ? 1.0
                               : result.raw_rollout_costs.front();
  for (double v : result.raw_rollout_costs)
    result.rollout_cost_curve.push_back(v / std::max(1e-300, cost_norm));
  return result;
}

inline nlohmann::json theta_checkpoint_json(const ParamCodec& codec,
                                            const VectorXd& theta) {
  ModelParams p = codec.decode(theta);
  nlohmann::json j;
  j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  j["M_o_diag"] =
      std::vector<double>(p.M_o.diagonal().data(), p.M_o.diagonal().data() + 6);
  j["K_r_diag"] = std::vector<double>(p.K_r_diag.data(),
                                      p.K_r_diag.data() + p.K_r_diag.size());
  j["m_o"] = p.m_o;
  j["mu"] = p.mu;
  j["sigma"] = p.sigma;
  j["h"] = p.h;
  return j;
}

}  // namespace contactsdf
