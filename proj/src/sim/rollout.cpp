#include "rodspring/sim/rollout.hpp"

#include <random>

namespace rodspring::sim {

namespace {

void check_guard(const SystemState& state, long step_index) {
  for (const RodState& rod : state.rods) {
    for (const Vec3* v : {&rod.p, &rod.v, &rod.omega}) {
      const double peak = v->cwiseAbs().maxCoeff();
      if (!(peak <= kBlowupGuard)) throw SimulationBlowupError(step_index, peak);
    }
  }
}

/// Regenerated at every event; arm follows the chosen endpoint per step.
struct ActivePoke {
  int rod = 0;
  RodEnd end = RodEnd::kPlus;
  Vec3 force = Vec3::Zero();
};

ActivePoke draw_poke(std::mt19937_64& rng, int n_rods, double magnitude) {
  std::uniform_int_distribution<int> rod_dist(0, n_rods - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  ActivePoke poke;
  poke.rod = rod_dist(rng);
  Vec3 dir;
  do {
    dir = Vec3(gauss(rng), gauss(rng), gauss(rng));
  } while (dir.norm() < 1e-12);
  poke.force = magnitude * dir.normalized();
  poke.end = coin(rng) ? RodEnd::kPlus : RodEnd::kMinus;
  return poke;
}

}  // namespace

Trajectory rollout(const SystemState& initial, const SystemConfig& config,
                   const EngineParams& params, long n_steps,
                   const std::vector<std::vector<ControlInput>>* control_schedule,
                   const std::optional<PerturbationSchedule>& perturbation) {
  if (n_steps < 1) throw ConfigError("rollout needs n_steps >= 1");
  if (control_schedule && perturbation)
    throw ConfigError("rollout takes a control schedule or a perturbation, not both");
  if (control_schedule && static_cast<long>(control_schedule->size()) < n_steps)
    throw ConfigError("control schedule shorter than the rollout");

  const int n_rods = config.topology.n_rods();
  const bool with_controls = control_schedule || perturbation.has_value();

  Trajectory traj;
  traj.config_ref = config.name;
  traj.states.reserve(n_steps + 1);
  traj.states.push_back(initial);
  if (with_controls) traj.controls.reserve(n_steps);

  std::mt19937_64 rng(perturbation ? perturbation->seed : 0);
  ActivePoke poke;

  check_guard(initial, 0);
  for (long k = 0; k < n_steps; ++k) {
    std::vector<ControlInput> controls;
    if (control_schedule) {
      controls = (*control_schedule)[k];
      if (static_cast<int>(controls.size()) != n_rods)
        throw ConfigError("control schedule row has wrong rod count");
    } else if (perturbation) {
      if (k % perturbation->period == 0)
        poke = draw_poke(rng, n_rods, perturbation->magnitude);
      controls.assign(n_rods, ControlInput{});
      const Vec3 r = rod_axis_world(traj.states.back().rods[poke.rod],
                                    config.topology.rods[poke.rod]);
      controls[poke.rod].force = poke.force;
      controls[poke.rod].arm = end_sign(poke.end) * r;
    }

    SystemState next =
        step(traj.states.back(), config, params, with_controls ? &controls : nullptr);
    check_guard(next, k + 1);
    traj.states.push_back(std::move(next));
    if (with_controls) traj.controls.push_back(std::move(controls));
  }
  return traj;
}

}  // namespace rodspring::sim
