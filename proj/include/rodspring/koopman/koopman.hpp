#pragma once

#include <json.hpp>

#include <vector>

#include "rodspring/ident/features.hpp"

namespace rodspring::koopman {

/// Base scalars per rod: world lever r plus the per-end aggregate spring
/// displacement/velocity channels, 5 vectors = 15 scalars.
inline constexpr int kBaseVars = 15;

/// 1 constant + 15 linear + 15 squares + C(15,2) = 105 cross terms.
inline constexpr int kFeatureCount = 136;

struct RodObservables {
  Vec3 r = Vec3::Zero();         // world-frame half-length vector of the rod
  Vec3 dp_plus = Vec3::Zero();   // sum over plus-end springs of stretch * u_e
  Vec3 dp_minus = Vec3::Zero();  // u_e points away from the opposite endpoint
  Vec3 dv_plus = Vec3::Zero();   // sum of rate * u_e
  Vec3 dv_minus = Vec3::Zero();
};

RodObservables observe_rod(int rod, const SystemState& state, const TopologyGraph& topo);

/// Feature order: 1; the 15 base scalars in struct order (r, dp_plus,
/// dp_minus, dv_plus, dv_minus, xyz within each); all products x_i x_j with
/// i <= j, pairs in lexicographic order. Pure function of its input.
Eigen::VectorXd lift(const RodObservables& obs);

/// Column of x_i * x_j (i <= j) inside the lifted vector.
int pair_feature_index(int i, int j);

/// Linear map from lifted features to (a - g, alpha), one 6 x 136 block per
/// rod, or a single shared block.
struct KoopmanModel {
  bool per_rod = true;
  std::vector<Eigen::MatrixXd> weights;  // 6 x kFeatureCount each

  const Eigen::MatrixXd& for_rod(int rod) const {
    return per_rod ? weights.at(rod) : weights.at(0);
  }
};

struct KoopmanFitOptions {
  bool per_rod = true;
  double ridge = 0.0;  // Tikhonov damping; 0 keeps the plain min-norm fit
  bool require_full_rank = false;
};

struct KoopmanFit {
  KoopmanModel model;
  double residual_rms = 0.0;  // pooled over the 6 outputs
  long rows = 0;              // feature rows fitted (per block sum)
  long rank = 0;              // smallest rank across blocks
  bool rank_deficient = false;
  double wall_seconds = 0.0;
};

/// Least squares from lifted features to acceleration targets (same targets
/// as the identification engine). Rank-deficient designs are the norm here
/// (the lift has built-in collinearities such as |r|^2 = const); the solve
/// is minimum-norm, the deficiency is reported, and only
/// `require_full_rank` turns it into RankDeficientError.
KoopmanFit fit_koopman(const ident::TransitionStream& stream, const SystemConfig& config,
                       const KoopmanFitOptions& options = {});

/// Held-out one-step residual RMS of the model on a stream of transitions.
double koopman_residual(const KoopmanModel& model, const ident::TransitionStream& stream,
                        const SystemConfig& config);

/// Minimum-norm least-squares solve of A X = Y via complete orthogonal
/// decomposition; ridge > 0 augments A with sqrt(ridge) I.
Eigen::MatrixXd least_squares_min_norm(const Eigen::MatrixXd& a, const Eigen::MatrixXd& y,
                                       double ridge, long* rank = nullptr);

/// Per step: observe -> lift -> predict (a - g, alpha) -> semi-implicit
/// Euler. Same blow-up guard as the simulator.
Trajectory koopman_rollout(const KoopmanModel& model, const SystemState& initial,
                           const SystemConfig& config, long n_steps);

nlohmann::json koopman_model_to_json(const KoopmanModel& model);
KoopmanModel koopman_model_from_json(const nlohmann::json& j);

}  // namespace rodspring::koopman
