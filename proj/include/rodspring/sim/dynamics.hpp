#pragma once

#include <vector>

#include "rodspring/core/kinematics.hpp"
#include "rodspring/core/params.hpp"
#include "rodspring/core/types.hpp"

namespace rodspring::sim {

/// Relative endpoint geometry of one spring at one instant.
/// dp = p_b - p_a, dv = v_b - v_a, u = dp/length, rate = dv . u.
struct SpringObservation {
  int spring_id = 0;
  Vec3 dp = Vec3::Zero();
  Vec3 dv = Vec3::Zero();
  double length = 0.0;
  Vec3 u = Vec3::Zero();
  double rate = 0.0;
};

/// Position/velocity of a resolved attachment point (anchors are static).
struct PointState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

PointState attachment_state(const AttachmentRef& ref, const SystemState& state,
                            const TopologyGraph& topo);

/// Throws DegenerateSpringError when the endpoints are closer than 1e-9.
SpringObservation observe_spring(int spring_id, const SystemState& state,
                                 const TopologyGraph& topo);

std::vector<SpringObservation> observe_all_springs(const SystemState& state,
                                                   const TopologyGraph& topo);

/// Force the spring exerts on endpoint a; endpoint b receives the negation.
/// Signed 1D law: s = k (length - rest) + c rate, force = s u.
Vec3 spring_force_on_a(const SpringObservation& obs, double k, double c, double rest);

/// Aggregate spring force on each end of each rod.
struct EndForces {
  Vec3 plus = Vec3::Zero();
  Vec3 minus = Vec3::Zero();

  const Vec3& at(RodEnd end) const { return end == RodEnd::kPlus ? plus : minus; }
};

std::vector<EndForces> aggregate_endpoint_forces(const SystemState& state,
                                                 const TopologyGraph& topo,
                                                 const EngineParams& params);

/// Linear and angular acceleration of one rod.
struct BodyAccel {
  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();
};

/// a = (F_plus + F_minus + f_u)/M + g
/// tau = r_world x (F_plus - F_minus) + r_u x f_u
/// alpha = R I^-1 R^T tau, I = diag(I11, I11, I33) in the rod frame.
/// f_u here is the already-scaled control force (h applied by the caller).
BodyAccel rod_acceleration(const Vec3& f_plus, const Vec3& f_minus, const Vec3& f_u,
                           const Vec3& r_u, const RodState& state, const RodSpec& spec,
                           double mass, double inertia11, double inertia33,
                           const Vec3& gravity);

/// Accelerations of every rod under the given parameters and optional
/// per-rod controls (scaled by params.control_scale).
std::vector<BodyAccel> system_accelerations(const SystemState& state,
                                            const SystemConfig& config,
                                            const EngineParams& params,
                                            const std::vector<ControlInput>* controls = nullptr);

/// Semi-implicit Euler: velocities first, then positions with the updated
/// velocities. Attitude: q' = normalize(q + dt/2 (0, omega') * q) with
/// world-frame omega'.
RodState integrate_semi_implicit(const RodState& state, const Vec3& accel,
                                 const Vec3& alpha, double dt);

/// One timestep of the full system. Pure function of its inputs.
SystemState step(const SystemState& state, const SystemConfig& config,
                 const EngineParams& params,
                 const std::vector<ControlInput>* controls = nullptr);

}  // namespace rodspring::sim
