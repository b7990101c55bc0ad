#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rodspring/core/params.hpp"
#include "rodspring/core/types.hpp"

namespace rodspring::blackbox {

/// Box-constrained search domain. The identification tasks share one positive
/// interval per coordinate and start every coordinate at 1.
struct SearchSpace {
  std::vector<std::string> names;
  Eigen::VectorXd lo, hi, init;

  int dim() const { return static_cast<int>(names.size()); }
  /// Bounds strictly positive and ordered, init inside, sizes consistent.
  void validate() const;
};

/// Space over `names` with the shared task box [0.1, 1000] and unit init.
SearchSpace make_space(std::vector<std::string> names);

using LossFn = std::function<double(const Eigen::VectorXd&)>;

struct CmaConfig {
  int lambda = 0;            // population size; 0 picks 4 + floor(3 ln n)
  double sigma0_frac = 0.3;  // initial step as a fraction of the box width
  double tolfun = 1.0;       // loss stagnation tolerance
  long max_iterations = 300;
  unsigned long seed = 1;
  int n_threads = 1;  // population evaluations per generation
};

struct HistoryEntry {
  long iteration = 0;
  double best_loss = 0.0;
  Eigen::VectorXd params;  // incumbent, parameter space
  double wall_seconds = 0.0;  // cumulative
};

struct OptResult {
  Eigen::VectorXd best;
  double best_loss = 0.0;
  std::vector<HistoryEntry> history;  // one entry per iteration
  long iterations = 0;
  bool converged = false;  // stopped on tolerance, not the iteration cap
  double wall_seconds = 0.0;
  double seconds_per_iteration = 0.0;
};

/// Returned instead of propagating a simulator abort inside a loss call.
inline constexpr double kBlowupPenalty = 1e12;

/// Mean squared state difference between `reference` and a re-simulation from
/// its initial state under `candidate`; recorded controls are replayed. The
/// per-step difference covers all 13 rod coordinates with quaternions sign-
/// aligned to the reference.
double trajectory_loss(const EngineParams& candidate, const Trajectory& reference,
                       const SystemConfig& config);

/// Uniform re-parameterization: "K" sets every spring stiffness, "c" every
/// damping, "M" every rod mass (inertia re-derived from the rod geometry),
/// "h" the control scale. Unknown names throw ConfigError.
EngineParams apply_named(const EngineParams& base, const TopologyGraph& topo,
                         const std::vector<std::string>& names,
                         const Eigen::VectorXd& values);

/// trajectory_loss with candidate vectors mapped through apply_named.
LossFn make_trajectory_loss(const SearchSpace& space, const EngineParams& base,
                            const Trajectory& reference, const SystemConfig& config);

/// (mu/mu_w, lambda) CMA-ES over the box, infeasible draws rejection-resampled.
/// Deterministic given the seed; incumbent loss is non-increasing.
OptResult cma_es(const LossFn& loss, const SearchSpace& space, const CmaConfig& config);

struct LocalSearchConfig {
  long max_iterations = 400;
  double tol = 1e-10;  // simplex loss-spread convergence threshold
};

/// Derivative-free bounded local search: Nelder-Mead simplex started at
/// `init`, candidate vertices clamped to the box.
OptResult local_search(const LossFn& loss, const SearchSpace& space,
                       const Eigen::VectorXd& init, const LocalSearchConfig& config = {});

/// `iter,best_loss,<one column per parameter name>,wall_seconds`.
void save_history_csv(const std::string& path, const OptResult& result,
                      const std::vector<std::string>& names);

}  // namespace rodspring::blackbox
