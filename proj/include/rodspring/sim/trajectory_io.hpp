#pragma once

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

#include "rodspring/sim/dataset.hpp"

namespace rodspring::sim {

/// States CSV: `traj,t,rod,px,py,pz,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz`, one row
/// per rod per state, states in time order within a trajectory. Doubles are
/// printed with %.17g so a round trip is bit exact.
void write_states_header(std::ostream& out);
void append_states_csv(std::ostream& out, long traj_index, const Trajectory& traj);

/// Controls CSV: `traj,step,rod,fux,fuy,fuz,rux,ruy,ruz`, one row per rod per
/// step. Only written for trajectories that carry controls.
void write_controls_header(std::ostream& out);
void append_controls_csv(std::ostream& out, long traj_index, const Trajectory& traj);

/// Reads every trajectory in the file, keyed by the traj column (ascending).
/// `n_rods` fixes the per-state row count. Controls are merged in from the
/// sidecar when given.
std::vector<Trajectory> read_trajectories_csv(const std::string& states_path, int n_rods,
                                              const std::string& controls_path = "");

/// One-call export of whole trajectories plus a manifest JSON tying the files
/// to the generating config.
struct DatasetFiles {
  std::string states;
  std::string controls;  // empty when no controls were written
  std::string manifest;
};
DatasetFiles write_dataset(const Dataset& dataset, const std::string& out_dir,
                           const std::string& stem);

nlohmann::json dataset_manifest(const Dataset& dataset, const DatasetFiles& files);

}  // namespace rodspring::sim
