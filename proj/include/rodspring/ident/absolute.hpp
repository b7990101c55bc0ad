#pragma once

#include <map>
#include <string>

#include "rodspring/ident/fit.hpp"
#include "rodspring/sim/rollout.hpp"

namespace rodspring::ident {

/// External scale anchors that turn ratio estimates into absolute values.
/// Inertia is always tied to mass through the cylinder geometry factor
/// I11/M = (2 half_length)^2/12 + radius^2/4, so one absolute quantity
/// anywhere in a connected rod-spring component fixes every parameter.
struct KnownScale {
  std::map<int, double> rod_mass;    // rod id -> known mass
  bool control_scale_known = false;  // h known (e.g. calibrated force rig)
  double known_h = 1.0;
};

struct AbsoluteParams {
  EngineParams params;
  bool scale_identified = false;
  std::string note;
};

/// Converts ratio estimates to absolute K, c, M, I11 by propagating the
/// anchored masses through shared springs (K_s = (K_s/M_r) M_r gives the
/// neighbor mass M_r' = K_s / (K_s/M_r')). Without any anchor the ratios are
/// passed through unscaled (M = 1) and flagged scale-unidentifiable; this
/// never throws.
AbsoluteParams resolve_absolute_params(const RatioEstimates& ratios,
                                       const TopologyGraph& topo,
                                       const KnownScale& known);

/// Convergence trace of the one-parameter control-scalar fit.
struct ControlScalarFit {
  double h = 1.0;
  std::vector<double> trace;       // h after each epoch
  std::vector<double> loss_curve;  // residual MSE after each epoch
  double trace_variance = 0.0;     // over the last 5 epochs
};

/// Fits h on forced data with every other parameter frozen: the spring terms
/// are subtracted from the observed accelerations and the leftover is
/// regressed on f_u/M (and its torque analogue) by the same Adam schedule.
/// Throws NoControlDataError when no transition carries a nonzero force.
ControlScalarFit tune_control_scalar(const TransitionStream& stream,
                                     const SystemConfig& config,
                                     const EngineParams& frozen,
                                     const FitConfig& fit = {});

/// Rollout under learned parameters; same machinery as the simulator.
Trajectory predict_rollout(const EngineParams& params, const SystemState& initial,
                           const SystemConfig& config, long n_steps,
                           const std::vector<std::vector<ControlInput>>* controls = nullptr);

}  // namespace rodspring::ident
