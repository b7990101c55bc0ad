#pragma once

#include <Eigen/Dense>

#include <string>

#include "rodspring/core/types.hpp"

namespace rodspring {

/// One (K, c) per spring and one (M, I11) per rod, or everything tied to a
/// single shared value of each.
enum class Tying { kSingle, kMultiple };

inline const char* tying_name(Tying t) { return t == Tying::kSingle ? "single" : "multiple"; }

/// Physical quantities the engine steps with and identification estimates:
/// per-spring stiffness/damping, per-rod mass/transverse inertia, and the
/// control force scalar h. I33 never enters the dynamics (spring forces act
/// at the endpoints, so torques are perpendicular to the rod axis) and is
/// kept geometry-derived.
struct EngineParams {
  Eigen::VectorXd spring_k;
  Eigen::VectorXd spring_c;
  Eigen::VectorXd rod_mass;
  Eigen::VectorXd rod_inertia11;
  double control_scale = 1.0;  // h
  Tying tying = Tying::kMultiple;

  static EngineParams from_topology(const TopologyGraph& topo) {
    EngineParams p;
    p.spring_k.resize(topo.n_springs());
    p.spring_c.resize(topo.n_springs());
    p.rod_mass.resize(topo.n_rods());
    p.rod_inertia11.resize(topo.n_rods());
    for (int s = 0; s < topo.n_springs(); ++s) {
      p.spring_k[s] = topo.springs[s].stiffness;
      p.spring_c[s] = topo.springs[s].damping;
    }
    for (int r = 0; r < topo.n_rods(); ++r) {
      p.rod_mass[r] = topo.rods[r].mass;
      p.rod_inertia11[r] = topo.rods[r].inertia.x();
    }
    return p;
  }

  void validate() const {
    auto positive = [](const Eigen::VectorXd& v) { return (v.array() > 0.0).all(); };
    if (!positive(spring_k) || !positive(rod_mass) || !positive(rod_inertia11))
      throw NonPhysicalParamsError("non-positive stiffness, mass or inertia");
    if ((spring_c.array() < 0.0).any())
      throw NonPhysicalParamsError("negative damping");
  }

  int n_springs() const { return static_cast<int>(spring_k.size()); }
  int n_rods() const { return static_cast<int>(rod_mass.size()); }
};

}  // namespace rodspring
