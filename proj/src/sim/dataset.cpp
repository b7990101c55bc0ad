#include "rodspring/sim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace rodspring::sim {

namespace {

/// Stable per-trajectory stream: the same (seed, index) pair always yields
/// the same generator, independent of visiting order.
std::mt19937_64 stream_rng(unsigned long seed, long traj_index, unsigned long salt) {
  std::seed_seq seq{static_cast<unsigned int>(seed & 0xffffffffu),
                    static_cast<unsigned int>(seed >> 16 >> 16),
                    static_cast<unsigned int>(traj_index),
                    static_cast<unsigned int>(salt)};
  return std::mt19937_64(seq);
}

}  // namespace

Dataset::Dataset(SystemConfig config, EngineParams params, SystemState base_state,
                 long n_traj, long n_steps, InitJitter jitter, unsigned long seed,
                 SplitFractions split, std::optional<PerturbationSchedule> perturbation)
    : config_(std::move(config)),
      params_(std::move(params)),
      base_state_(std::move(base_state)),
      n_traj_(n_traj),
      n_steps_(n_steps),
      jitter_(jitter),
      seed_(seed),
      perturbation_(perturbation) {
  if (n_traj_ < 1 || n_steps_ < 1) throw ConfigError("dataset needs n_traj, n_steps >= 1");
  split.validate();
  const double total = split.train + split.val + split.test;
  long n_train = std::max<long>(1, std::lround(n_traj_ * split.train / total));
  long n_val = std::max<long>(1, std::lround(n_traj_ * split.val / total));
  if (n_train + n_val >= n_traj_) {
    n_train = std::max<long>(1, n_traj_ - 2);
    n_val = n_traj_ > 1 ? 1 : 0;
  }
  train_ = Split{0, n_train};
  val_ = Split{n_train, std::min(n_traj_, n_train + n_val)};
  test_ = Split{val_.end, n_traj_};
}

SystemState Dataset::initial_state(long traj_index) const {
  if (traj_index < 0 || traj_index >= n_traj_)
    throw ConfigError("trajectory index out of range");
  std::mt19937_64 rng = stream_rng(seed_, traj_index, 1);
  std::uniform_real_distribution<double> pos(-jitter_.position, jitter_.position);
  std::uniform_real_distribution<double> vel(-jitter_.velocity, jitter_.velocity);

  SystemState st = base_state_;
  for (RodState& rod : st.rods) {
    rod.p += Vec3(pos(rng), pos(rng), pos(rng));
    rod.v += Vec3(vel(rng), vel(rng), vel(rng));
  }
  return st;
}

Trajectory Dataset::trajectory(long traj_index) const {
  std::optional<PerturbationSchedule> perturbation = perturbation_;
  if (perturbation) {
    std::mt19937_64 rng = stream_rng(seed_, traj_index, 2);
    perturbation->seed = static_cast<unsigned long>(rng());
  }
  return rollout(initial_state(traj_index), config_, params_, n_steps_, nullptr,
                 perturbation);
}

std::vector<TransitionRef> Dataset::transitions(Split split) const {
  std::vector<TransitionRef> refs;
  refs.reserve((split.end - split.begin) * n_steps_);
  for (long t = split.begin; t < split.end; ++t)
    for (long k = 0; k < n_steps_; ++k) refs.push_back(TransitionRef{t, k});
  return refs;
}

std::vector<TransitionRef> Dataset::sample_transitions(Split split, long count,
                                                       unsigned long seed) const {
  const long pool = (split.end - split.begin) * n_steps_;
  if (count < 1 || count > pool)
    throw ConfigError("sample count must be in [1, " + std::to_string(pool) + "]");

  std::vector<long> flat(pool);
  for (long i = 0; i < pool; ++i) flat[i] = i;
  std::vector<long> chosen;
  chosen.reserve(count);
  std::mt19937_64 rng(seed);
  std::sample(flat.begin(), flat.end(), std::back_inserter(chosen), count, rng);

  std::vector<TransitionRef> refs;
  refs.reserve(count);
  for (long f : chosen)
    refs.push_back(TransitionRef{split.begin + f / n_steps_, f % n_steps_});
  return refs;
}

void Dataset::for_each_transition(const std::vector<TransitionRef>& refs,
                                  const TransitionVisitor& visit) const {
  size_t i = 0;
  while (i < refs.size()) {
    const long traj_index = refs[i].traj;
    const Trajectory traj = trajectory(traj_index);
    for (; i < refs.size() && refs[i].traj == traj_index; ++i) {
      const long k = refs[i].step;
      if (k < 0 || k >= n_steps_) throw ConfigError("transition step out of range");
      const std::vector<ControlInput>* controls =
          traj.has_controls() ? &traj.controls[k] : nullptr;
      visit(refs[i], traj.states[k], traj.states[k + 1], controls);
    }
  }
}

Dataset sample_dataset(const SystemConfig& config, const EngineParams& params,
                       const SystemState& base_state, long n_traj, long n_steps,
                       const InitJitter& jitter, unsigned long seed,
                       const SplitFractions& split,
                       std::optional<PerturbationSchedule> perturbation) {
  return Dataset(config, params, base_state, n_traj, n_steps, jitter, seed, split,
                 perturbation);
}

}  // namespace rodspring::sim
