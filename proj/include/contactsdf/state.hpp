#pragma once

#include <json.hpp>

#include "contactsdf/quaternion.hpp"
#include "contactsdf/types.hpp"

namespace contactsdf {

// Object pose (world position + wxyz unit quaternion) and robot
// configuration. Velocities over this state are [v_lin_world(3),
// omega_body(3), v_robot(n_r)].
template <typename S>
struct SystemStateT {
  Vec3<S> object_position = Vec3<S>::Zero();
  Vec4<S> object_quaternion = Vec4<S>(S(1), S(0), S(0), S(0));
  VecX<S> robot_config;

  Eigen::Index robot_dim() const { return robot_config.size(); }
  Eigen::Index velocity_dim() const { return 6 + robot_config.size(); }

  template <typename T>
  SystemStateT<T> cast() const {
    SystemStateT<T> out;
    out.object_position = object_position.template cast<T>();
    out.object_quaternion = object_quaternion.template cast<T>();
    out.robot_config = robot_config.template cast<T>();
    return out;
  }
};

using SystemState = SystemStateT<double>;

inline void normalize_quaternion(SystemState& state) {
  state.object_quaternion.normalize();
}

inline nlohmann::json to_json(const SystemState& s) {
  nlohmann::json j;
  j["object_position"] = {s.object_position[0], s.object_position[1],
                          s.object_position[2]};
  j["object_quaternion"] = {s.object_quaternion[0], s.object_quaternion[1],
                            s.object_quaternion[2], s.object_quaternion[3]};
  j["robot_config"] = std::vector<double>(
      s.robot_config.data(), s.robot_config.data() + s.robot_config.size());
  return j;
}

inline SystemState system_state_from_json(const nlohmann::json& j) {
  SystemState s;
  for (int k = 0; k < 3; ++k)
    s.object_position[k] = j.at("object_position")[static_cast<size_t>(k)];
  for (int k = 0; k < 4; ++k)
    s.object_quaternion[k] = j.at("object_quaternion")[static_cast<size_t>(k)];
  const auto& rc = j.at("robot_config");
  s.robot_config.resize(static_cast<Eigen::Index>(rc.size()));
  for (size_t k = 0; k < rc.size(); ++k)
    s.robot_config[static_cast<Eigen::Index>(k)] = rc[k];
  return s;
}

}  // namespace contactsdf
