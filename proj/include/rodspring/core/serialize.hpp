#pragma once

#include <json.hpp>

#include <string>

#include "rodspring/core/presets.hpp"
#include "rodspring/core/types.hpp"

namespace rodspring {

/// JSON shape:
/// {name, gravity:[x,y,z], dt,
///  rods:[{half_length, radius, mass, inertia:[I11,I11,I33]}],
///  springs:[{stiffness, damping, rest_length, a:{rod,end}|{anchor}, b:...}],
///  anchors:[[x,y,z],...]}
nlohmann::json config_to_json(const SystemConfig& config);
SystemConfig config_from_json(const nlohmann::json& j);

/// {time, rods:[{p:[...], v:[...], q:[w,x,y,z], omega:[...]}]}
nlohmann::json state_to_json(const SystemState& state);
SystemState state_from_json(const nlohmann::json& j);

/// Config object with an extra "initial_state" key holding the rest pose.
nlohmann::json scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const nlohmann::json& j);

/// Reads a scenario JSON file; a config without "initial_state" gets
/// identity rod states. Throws IoError / ConfigError.
Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& scenario, const std::string& path);

/// FNV-1a hash of the canonically serialized config, hex encoded. Ties
/// datasets and fit reports back to the generating configuration.
std::string config_hash(const SystemConfig& config);

}  // namespace rodspring
