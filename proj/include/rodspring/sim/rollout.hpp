#pragma once

#include <optional>
#include <vector>

#include "rodspring/sim/dynamics.hpp"

namespace rodspring::sim {

/// Random endpoint pokes: every `period` steps a fresh rod, force direction
/// and endpoint are drawn and the force is held until the next event. The
/// lever arm tracks the chosen endpoint as the rod rotates.
struct PerturbationSchedule {
  long period = 100;
  double magnitude = 10.0;  // N
  unsigned long seed = 0;
};

/// Any |p|, |v| or |omega| component beyond this aborts the rollout.
inline constexpr double kBlowupGuard = 1e6;

/// Integrates n_steps timesteps from `initial`. Exactly one of
/// control_schedule / perturbation may be given; the produced trajectory
/// records the controls actually applied (before scaling by h). Deterministic
/// given the schedule seed. Throws SimulationBlowupError past the guard.
Trajectory rollout(const SystemState& initial, const SystemConfig& config,
                   const EngineParams& params, long n_steps,
                   const std::vector<std::vector<ControlInput>>* control_schedule = nullptr,
                   const std::optional<PerturbationSchedule>& perturbation = std::nullopt);

}  // namespace rodspring::sim
