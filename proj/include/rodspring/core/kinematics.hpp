#pragma once

#include "rodspring/core/types.hpp"

namespace rodspring {

/// World-frame half-length vector of a rod: R(q) * (0, 0, half_length).
inline Vec3 rod_axis_world(const RodState& state, const RodSpec& spec) {
  return state.q * Vec3(0.0, 0.0, spec.half_length);
}

/// Position and velocity of both rod endpoints.
/// p_pm = p +- r_world, v_pm = v +- omega x r_world.
struct EndpointKinematics {
  Vec3 p_plus, v_plus, p_minus, v_minus;

  const Vec3& p(RodEnd end) const { return end == RodEnd::kPlus ? p_plus : p_minus; }
  const Vec3& v(RodEnd end) const { return end == RodEnd::kPlus ? v_plus : v_minus; }
};

inline EndpointKinematics endpoint_kinematics(const RodState& state, const RodSpec& spec) {
  const Vec3 r = rod_axis_world(state, spec);
  const Vec3 spin = state.omega.cross(r);
  return EndpointKinematics{state.p + r, state.v + spin, state.p - r, state.v - spin};
}

}  // namespace rodspring
