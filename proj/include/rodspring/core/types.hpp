#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <string>
#include <vector>

#include "rodspring/core/errors.hpp"

namespace rodspring {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline bool is_finite(const Vec3& v) { return v.allFinite(); }

/// Unit-norm tolerance enforced on quaternions after construction and
/// integration.
inline constexpr double kQuatNormTol = 1e-9;

/// Returns q scaled back to unit norm.
inline Quat normalized(const Quat& q) {
  Quat out = q;
  out.normalize();
  return out;
}

/// Rotation matrix of a unit quaternion.
inline Mat3 rotation_matrix(const Quat& q) { return q.toRotationMatrix(); }

/// Kinematic state of one rod: center-of-mass position/velocity, orientation
/// and world-frame angular velocity.
struct RodState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 omega = Vec3::Zero();

  bool finite() const {
    return is_finite(p) && is_finite(v) && is_finite(omega) &&
           q.coeffs().allFinite() && std::abs(q.norm() - 1.0) < 1e-6;
  }
};

/// Geometry and inertial properties of a rigid rod. The rod axis is local +z;
/// the local half-length vector is (0, 0, half_length).
struct RodSpec {
  double half_length = 0.5;  // m
  double radius = 0.02;      // m, cylinder radius
  double mass = 1.0;         // kg
  Vec3 inertia = Vec3(1.0, 1.0, 1.0);  // local diag (I11, I11, I33), kg m^2

  /// Solid-cylinder inertia for a rod of height 2*half_length.
  static RodSpec from_geometry(double half_length, double radius, double mass) {
    RodSpec spec;
    spec.half_length = half_length;
    spec.radius = radius;
    spec.mass = mass;
    const double h = 2.0 * half_length;
    const double i11 = mass * (h * h / 12.0 + radius * radius / 4.0);
    const double i33 = mass * radius * radius / 2.0;
    spec.inertia = Vec3(i11, i11, i33);
    return spec;
  }

  void validate(int rod_id) const {
    if (!(half_length > 0.0) || !(radius > 0.0))
      throw ConfigError("rod " + std::to_string(rod_id) + ": non-positive geometry");
    if (!(mass > 0.0) || !(inertia.x() > 0.0) || !(inertia.z() > 0.0))
      throw ConfigError("rod " + std::to_string(rod_id) + ": non-positive mass/inertia");
  }
};

enum class RodEnd { kPlus, kMinus };

inline double end_sign(RodEnd end) { return end == RodEnd::kPlus ? 1.0 : -1.0; }
inline const char* end_name(RodEnd end) { return end == RodEnd::kPlus ? "plus" : "minus"; }

/// Where a spring endpoint attaches: a rod end or a fixed world anchor.
struct AttachmentRef {
  enum class Kind { kRodEnd, kAnchor };
  Kind kind = Kind::kAnchor;
  int index = 0;                // rod id or anchor id
  RodEnd end = RodEnd::kPlus;   // valid when kind == kRodEnd

  static AttachmentRef rod_end(int rod_id, RodEnd end) {
    return AttachmentRef{Kind::kRodEnd, rod_id, end};
  }
  static AttachmentRef anchor(int anchor_id) {
    return AttachmentRef{Kind::kAnchor, anchor_id, RodEnd::kPlus};
  }
  bool is_rod() const { return kind == Kind::kRodEnd; }

  friend bool operator==(const AttachmentRef& a, const AttachmentRef& b) {
    if (a.kind != b.kind || a.index != b.index) return false;
    return a.kind == Kind::kAnchor || a.end == b.end;
  }
};

/// Linear spring-damper connecting two attachment points.
struct SpringSpec {
  double stiffness = 1.0;    // N/m
  double damping = 0.0;      // N s/m
  double rest_length = 1.0;  // m
  AttachmentRef a;
  AttachmentRef b;

  void validate(int spring_id) const {
    if (!(stiffness > 0.0) || damping < 0.0 || !(rest_length > 0.0))
      throw ConfigError("spring " + std::to_string(spring_id) +
                        ": invalid stiffness/damping/rest length");
    if (a == b)
      throw TopologyError("spring " + std::to_string(spring_id) +
                          ": endpoints reference the same attachment");
  }
};

/// Bipartite interconnection graph: springs on one side, rod ends and anchors
/// on the other.
struct TopologyGraph {
  std::vector<RodSpec> rods;
  std::vector<SpringSpec> springs;
  std::vector<Vec3> anchors;

  int n_rods() const { return static_cast<int>(rods.size()); }
  int n_springs() const { return static_cast<int>(springs.size()); }

  /// Checks every attachment resolves and every element is physical.
  void validate() const;

  /// Spring ids attached to the given rod end.
  std::vector<int> springs_at(int rod_id, RodEnd end) const;

  /// Spring ids attached to either end of the given rod, ascending.
  std::vector<int> springs_of_rod(int rod_id) const;
};

/// Full scene description: topology plus ambient settings.
struct SystemConfig {
  TopologyGraph topology;
  Vec3 gravity = Vec3::Zero();
  double dt = 0.002;  // s
  std::string name = "unnamed";

  /// Stability guard on the timestep; explicit-style integrators misbehave
  /// well below conventional real-time rates.
  static constexpr double kMaxDt = 0.01;

  void validate() const {
    if (!(dt > 0.0) || dt > kMaxDt)
      throw ConfigError("dt must be in (0, " + std::to_string(kMaxDt) + "]");
    if (!is_finite(gravity)) throw ConfigError("gravity must be finite");
    topology.validate();
  }
};

/// External force and world-frame lever arm applied to one rod for one step.
struct ControlInput {
  Vec3 force = Vec3::Zero();  // N
  Vec3 arm = Vec3::Zero();    // m, lever from the center of mass

  bool active() const { return force.squaredNorm() > 0.0; }
};

/// States of all rods at one instant.
struct SystemState {
  std::vector<RodState> rods;
  double time = 0.0;
};

/// Time series of system states plus the controls applied between them.
/// controls[k][r] acts on rod r during the step from states[k] to states[k+1].
struct Trajectory {
  std::string config_ref;
  std::vector<SystemState> states;
  std::vector<std::vector<ControlInput>> controls;

  long n_steps() const { return static_cast<long>(states.size()) - 1; }
  bool has_controls() const { return !controls.empty(); }
};

}  // namespace rodspring
