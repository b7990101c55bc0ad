#include "rodspring/core/presets.hpp"

#include <cmath>
#include <random>

#include "rodspring/core/kinematics.hpp"

namespace rodspring {

namespace {

constexpr double kPi = 3.14159265358979323846;

Quat axis_to_quat_x() { return Quat(Eigen::AngleAxisd(kPi / 2.0, Vec3::UnitY())); }
Quat axis_to_quat_y() { return Quat(Eigen::AngleAxisd(-kPi / 2.0, Vec3::UnitX())); }

SystemState state_of(std::vector<RodState> rods) {
  SystemState st;
  st.rods = std::move(rods);
  st.time = 0.0;
  return st;
}

}  // namespace

Scenario make_simple() {
  Scenario sc;
  SystemConfig& cfg = sc.config;
  cfg.name = "simple";
  cfg.gravity = Vec3::Zero();
  cfg.dt = 0.002;

  TopologyGraph& topo = cfg.topology;
  topo.rods.push_back(RodSpec::from_geometry(1.0, 0.02, 10.0));
  topo.anchors = {Vec3(-2.0, 0.0, 0.0), Vec3(2.0, 0.0, 1.0)};

  SpringSpec slack;
  slack.stiffness = 100.0;
  slack.damping = 10.0;
  slack.rest_length = 1.0;
  slack.a = AttachmentRef::anchor(0);
  slack.b = AttachmentRef::rod_end(0, RodEnd::kMinus);
  topo.springs.push_back(slack);

  SpringSpec taut;
  taut.stiffness = 100.0;
  taut.damping = 10.0;
  taut.rest_length = 1.414;
  taut.a = AttachmentRef::anchor(1);
  taut.b = AttachmentRef::rod_end(0, RodEnd::kPlus);
  topo.springs.push_back(taut);

  RodState rod;  // axis along +x, centered at the origin
  rod.q = normalized(axis_to_quat_x());
  sc.rest_state = state_of({rod});
  cfg.validate();
  return sc;
}

namespace {

/// Strut axis group: rods 0-1 along x, 2-3 along y, 4-5 along z.
int icosa_group(int rod_id) { return rod_id / 2; }

/// Golden-rectangle pose for the 6-strut icosahedron tensegrity. Struts of
/// length L form three orthogonal rectangles of width d = L/phi; the 12 strut
/// ends are the vertices of a regular icosahedron with edge d.
std::vector<RodState> icosa_pose(double strut_length) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const double d = strut_length / phi;
  const Quat qx = normalized(axis_to_quat_x());
  const Quat qy = normalized(axis_to_quat_y());
  const Quat qz = Quat::Identity();

  std::vector<RodState> rods(6);
  rods[0].p = Vec3(0.0, d / 2.0, 0.0);
  rods[0].q = qx;
  rods[1].p = Vec3(0.0, -d / 2.0, 0.0);
  rods[1].q = qx;
  rods[2].p = Vec3(0.0, 0.0, d / 2.0);
  rods[2].q = qy;
  rods[3].p = Vec3(0.0, 0.0, -d / 2.0);
  rods[3].q = qy;
  rods[4].p = Vec3(d / 2.0, 0.0, 0.0);
  rods[4].q = qz;
  rods[5].p = Vec3(-d / 2.0, 0.0, 0.0);
  rods[5].q = qz;
  return rods;
}

Scenario make_icosa_base() {
  constexpr double kStrutLength = 1.04;
  constexpr double kRestLength = 0.637;
  constexpr double kRadius = 0.02;

  Scenario sc;
  SystemConfig& cfg = sc.config;
  cfg.name = "icosa_uniform";
  cfg.gravity = Vec3(0.0, 0.0, -9.81);
  cfg.dt = 0.002;

  TopologyGraph& topo = cfg.topology;
  for (int r = 0; r < 6; ++r)
    topo.rods.push_back(RodSpec::from_geometry(kStrutLength / 2.0, kRadius, 10.0));

  const std::vector<RodState> pose = icosa_pose(kStrutLength);

  // Cables are the icosahedron edges except the 6 rectangle short sides
  // (those join two ends of the same strut pair). Edge length at this pose
  // is d = L/phi; every other vertex distance is at least phi times larger.
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const double edge = kStrutLength / phi;
  struct Node {
    int rod;
    RodEnd end;
    Vec3 p;
  };
  std::vector<Node> nodes;
  for (int r = 0; r < 6; ++r) {
    const EndpointKinematics kin = endpoint_kinematics(pose[r], topo.rods[r]);
    nodes.push_back({r, RodEnd::kPlus, kin.p_plus});
    nodes.push_back({r, RodEnd::kMinus, kin.p_minus});
  }
  for (size_t i = 0; i < nodes.size(); ++i) {
    for (size_t j = i + 1; j < nodes.size(); ++j) {
      if (icosa_group(nodes[i].rod) == icosa_group(nodes[j].rod)) continue;
      if ((nodes[i].p - nodes[j].p).norm() > 1.2 * edge) continue;
      SpringSpec cable;
      cable.stiffness = 100.0;
      cable.damping = 10.0;
      cable.rest_length = kRestLength;
      cable.a = AttachmentRef::rod_end(nodes[i].rod, nodes[i].end);
      cable.b = AttachmentRef::rod_end(nodes[j].rod, nodes[j].end);
      topo.springs.push_back(cable);
    }
  }

  sc.rest_state = state_of(pose);
  cfg.validate();
  return sc;
}

}  // namespace

Scenario make_icosa_uniform() { return make_icosa_base(); }

Scenario make_icosa_nonuniform(unsigned long seed, double sigma_frac) {
  Scenario sc = make_icosa_base();
  sc.config.name = "icosa_nonuniform";

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // Each draw scales one base value by (1 + sigma_frac * N(0,1)), resampled
  // until positive. Order: per spring (stiffness, damping), then rod masses.
  auto perturb = [&](double base) {
    double value = 0.0;
    do {
      value = base * (1.0 + sigma_frac * gauss(rng));
    } while (!(value > 0.0));
    return value;
  };

  TopologyGraph& topo = sc.config.topology;
  for (SpringSpec& s : topo.springs) {
    s.stiffness = perturb(s.stiffness);
    s.damping = perturb(s.damping);
  }
  for (RodSpec& r : topo.rods)
    r = RodSpec::from_geometry(r.half_length, r.radius, perturb(r.mass));

  sc.config.validate();
  return sc;
}

bool is_preset_name(const std::string& name) {
  return name == "simple" || name == "icosa_uniform" || name == "icosa_nonuniform";
}

Scenario make_preset(const std::string& name, unsigned long seed, double sigma_frac) {
  if (name == "simple") return make_simple();
  if (name == "icosa_uniform") return make_icosa_uniform();
  if (name == "icosa_nonuniform") return make_icosa_nonuniform(seed, sigma_frac);
  throw ConfigError("unknown preset: " + name);
}

}  // namespace rodspring
