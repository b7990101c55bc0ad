#include "rodspring/sim/dynamics.hpp"

namespace rodspring::sim {

PointState attachment_state(const AttachmentRef& ref, const SystemState& state,
                            const TopologyGraph& topo) {
  if (!ref.is_rod()) return PointState{topo.anchors.at(ref.index), Vec3::Zero()};
  const EndpointKinematics kin =
      endpoint_kinematics(state.rods.at(ref.index), topo.rods.at(ref.index));
  return PointState{kin.p(ref.end), kin.v(ref.end)};
}

SpringObservation observe_spring(int spring_id, const SystemState& state,
                                 const TopologyGraph& topo) {
  const SpringSpec& spring = topo.springs.at(spring_id);
  const PointState a = attachment_state(spring.a, state, topo);
  const PointState b = attachment_state(spring.b, state, topo);

  SpringObservation obs;
  obs.spring_id = spring_id;
  obs.dp = b.p - a.p;
  obs.dv = b.v - a.v;
  obs.length = obs.dp.norm();
  if (obs.length < 1e-9) throw DegenerateSpringError(spring_id, obs.length);
  obs.u = obs.dp / obs.length;
  obs.rate = obs.dv.dot(obs.u);
  return obs;
}

std::vector<SpringObservation> observe_all_springs(const SystemState& state,
                                                   const TopologyGraph& topo) {
  std::vector<SpringObservation> out;
  out.reserve(topo.n_springs());
  for (int s = 0; s < topo.n_springs(); ++s) out.push_back(observe_spring(s, state, topo));
  return out;
}

Vec3 spring_force_on_a(const SpringObservation& obs, double k, double c, double rest) {
  const double s = k * (obs.length - rest) + c * obs.rate;
  return s * obs.u;
}

std::vector<EndForces> aggregate_endpoint_forces(const SystemState& state,
                                                 const TopologyGraph& topo,
                                                 const EngineParams& params) {
  std::vector<EndForces> forces(topo.n_rods());
  auto deposit = [&](const AttachmentRef& ref, const Vec3& f) {
    if (!ref.is_rod()) return;
    Vec3& slot =
        ref.end == RodEnd::kPlus ? forces[ref.index].plus : forces[ref.index].minus;
    slot += f;
  };
  for (int s = 0; s < topo.n_springs(); ++s) {
    const SpringObservation obs = observe_spring(s, state, topo);
    const Vec3 f_a =
        spring_force_on_a(obs, params.spring_k[s], params.spring_c[s],
                          topo.springs[s].rest_length);
    deposit(topo.springs[s].a, f_a);
    deposit(topo.springs[s].b, -f_a);
  }
  return forces;
}

BodyAccel rod_acceleration(const Vec3& f_plus, const Vec3& f_minus, const Vec3& f_u,
                           const Vec3& r_u, const RodState& state, const RodSpec& spec,
                           double mass, double inertia11, double inertia33,
                           const Vec3& gravity) {
  BodyAccel out;
  out.linear = (f_plus + f_minus + f_u) / mass + gravity;

  const Vec3 r = rod_axis_world(state, spec);
  const Vec3 tau = r.cross(f_plus - f_minus) + r_u.cross(f_u);
  const Mat3 rot = rotation_matrix(state.q);
  const Vec3 tau_local = rot.transpose() * tau;
  const Vec3 alpha_local(tau_local.x() / inertia11, tau_local.y() / inertia11,
                         tau_local.z() / inertia33);
  out.angular = rot * alpha_local;
  return out;
}

std::vector<BodyAccel> system_accelerations(const SystemState& state,
                                            const SystemConfig& config,
                                            const EngineParams& params,
                                            const std::vector<ControlInput>* controls) {
  const TopologyGraph& topo = config.topology;
  const std::vector<EndForces> forces = aggregate_endpoint_forces(state, topo, params);

  std::vector<BodyAccel> accels(topo.n_rods());
  for (int r = 0; r < topo.n_rods(); ++r) {
    Vec3 f_u = Vec3::Zero();
    Vec3 r_u = Vec3::Zero();
    if (controls && !controls->empty()) {
      const ControlInput& u = controls->at(r);
      f_u = params.control_scale * u.force;
      r_u = u.arm;
    }
    const double i11 = params.rod_inertia11[r];
    accels[r] = rod_acceleration(forces[r].plus, forces[r].minus, f_u, r_u,
                                 state.rods[r], topo.rods[r], params.rod_mass[r], i11,
                                 topo.rods[r].inertia.z(), config.gravity);
  }
  return accels;
}

RodState integrate_semi_implicit(const RodState& state, const Vec3& accel,
                                 const Vec3& alpha, double dt) {
  RodState next;
  next.v = state.v + accel * dt;
  next.p = state.p + next.v * dt;
  next.omega = state.omega + alpha * dt;

  const Quat spin(0.0, next.omega.x(), next.omega.y(), next.omega.z());
  Quat q = state.q;
  q.coeffs() += 0.5 * dt * (spin * state.q).coeffs();
  next.q = normalized(q);
  return next;
}

SystemState step(const SystemState& state, const SystemConfig& config,
                 const EngineParams& params, const std::vector<ControlInput>* controls) {
  const std::vector<BodyAccel> accels = system_accelerations(state, config, params, controls);
  SystemState next;
  next.rods.resize(state.rods.size());
  for (size_t r = 0; r < state.rods.size(); ++r)
    next.rods[r] =
        integrate_semi_implicit(state.rods[r], accels[r].linear, accels[r].angular, config.dt);
  next.time = state.time + config.dt;
  return next;
}

}  // namespace rodspring::sim
