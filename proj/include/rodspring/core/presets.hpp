#pragma once

#include <string>

#include "rodspring/core/params.hpp"
#include "rodspring/core/types.hpp"

namespace rodspring {

/// A ready-to-run scene: configuration plus the nominal (rest) pose datasets
/// are jittered around.
struct Scenario {
  SystemConfig config;
  SystemState rest_state;
};

/// One rod (2 m, 10 kg) suspended between two nails by a stiff and a slack
/// spring (rest lengths 1 m and 1.414 m). Gravity off.
Scenario make_simple();

/// Six-strut, 24-cable icosahedron tensegrity in the golden-rectangle pose
/// (strut length 1.04 m, cable rest length 0.637 m), uniform parameters
/// K=100, c=10, M=10, gravity (0,0,-9.81). Free floating: no anchors.
Scenario make_icosa_uniform();

/// Icosahedron with per-element Gaussian parameter spread: each stiffness,
/// damping and rod mass is scaled by N(1, sigma_frac); inertia follows the
/// perturbed mass through the cylinder formula. 24+24+6 = 54 free parameters.
Scenario make_icosa_nonuniform(unsigned long seed, double sigma_frac);

/// Lookup by name: "simple", "icosa_uniform", "icosa_nonuniform".
/// The nonuniform preset takes its spread/seed from the extra arguments.
Scenario make_preset(const std::string& name, unsigned long seed = 1,
                     double sigma_frac = 0.2);

bool is_preset_name(const std::string& name);

}  // namespace rodspring
