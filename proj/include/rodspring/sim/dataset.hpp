#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "rodspring/sim/rollout.hpp"

namespace rodspring::sim {

/// Per-rod uniform jitter applied to the base pose when sampling initial
/// conditions: position U(-position, position) per axis, velocity
/// U(-velocity, velocity) per axis.
struct InitJitter {
  double position = 0.1;  // m
  double velocity = 0.5;  // m/s
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  void validate() const {
    if (!(train > 0.0) || !(val > 0.0) || !(test > 0.0))
      throw ConfigError("split fractions must be positive");
  }
};

/// Identifies one (S_t, S_{t+1}) pair inside the dataset.
struct TransitionRef {
  long traj = 0;
  long step = 0;
};

/// A pool of rollouts from jittered initial conditions. Trajectories are not
/// stored; they are regenerated on demand from per-trajectory RNG streams
/// derived from (seed, traj index), so access order never changes results
/// and memory stays flat regardless of pool size.
class Dataset {
 public:
  Dataset(SystemConfig config, EngineParams params, SystemState base_state, long n_traj,
          long n_steps, InitJitter jitter, unsigned long seed, SplitFractions split,
          std::optional<PerturbationSchedule> perturbation = std::nullopt);

  long n_traj() const { return n_traj_; }
  long n_steps() const { return n_steps_; }
  long n_transitions() const { return n_traj_ * n_steps_; }

  const SystemConfig& config() const { return config_; }
  const EngineParams& params() const { return params_; }
  bool has_controls() const { return perturbation_.has_value(); }

  /// Contiguous trajectory index range of one split (train, then val, then
  /// test, in trajectory order).
  struct Split {
    long begin = 0;
    long end = 0;
    long size() const { return end - begin; }
  };
  Split train_split() const { return train_; }
  Split val_split() const { return val_; }
  Split test_split() const { return test_; }

  SystemState initial_state(long traj_index) const;
  Trajectory trajectory(long traj_index) const;

  /// Every transition of the split, trajectory-major.
  std::vector<TransitionRef> transitions(Split split) const;

  /// `count` distinct transitions drawn uniformly from the split without
  /// replacement, deterministic in `seed`, trajectory-major order.
  std::vector<TransitionRef> sample_transitions(Split split, long count,
                                                unsigned long seed) const;

  using TransitionVisitor =
      std::function<void(const TransitionRef&, const SystemState& s0, const SystemState& s1,
                         const std::vector<ControlInput>* controls)>;

  /// Visits the given transitions grouped by trajectory so each trajectory is
  /// regenerated exactly once. `refs` must be trajectory-major sorted.
  void for_each_transition(const std::vector<TransitionRef>& refs,
                           const TransitionVisitor& visit) const;

 private:
  SystemConfig config_;
  EngineParams params_;
  SystemState base_state_;
  long n_traj_;
  long n_steps_;
  InitJitter jitter_;
  unsigned long seed_;
  std::optional<PerturbationSchedule> perturbation_;
  Split train_, val_, test_;
};

/// Builds the pool: `n_traj` rollouts of `n_steps` steps each, initial
/// conditions jittered around `base_state`, split by trajectory count into
/// train/val/test by the given fractions.
Dataset sample_dataset(const SystemConfig& config, const EngineParams& params,
                       const SystemState& base_state, long n_traj, long n_steps,
                       const InitJitter& jitter, unsigned long seed,
                       const SplitFractions& split = SplitFractions{},
                       std::optional<PerturbationSchedule> perturbation = std::nullopt);

}  // namespace rodspring::sim
