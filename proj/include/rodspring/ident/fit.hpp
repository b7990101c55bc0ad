#pragma once

#include <optional>
#include <string>

#include "rodspring/ident/features.hpp"

namespace rodspring::ident {

/// Ratio parameters recovered by regression, one entry per layout block.
struct BlockEstimate {
  int block = 0;
  std::vector<int> springs;   // as in BlockLayout
  Eigen::VectorXd k_lin;      // K_s / M
  Eigen::VectorXd c_lin;      // c_s / M
  Eigen::VectorXd k_ang;      // K_s / I11
  Eigen::VectorXd c_ang;      // c_s / I11
  std::optional<double> control_lin;  // h / M
  std::optional<double> control_ang;  // h / I11
  double lin_residual_rms = 0.0;
  double ang_residual_rms = 0.0;
  long lin_rows = 0;
  long ang_rows = 0;
};

struct RatioEstimates {
  Tying tying = Tying::kSingle;
  std::vector<BlockEstimate> blocks;

  const BlockEstimate& for_rod(int rod) const {
    return tying == Tying::kSingle ? blocks.at(0) : blocks.at(rod);
  }
};

struct ClosedFormFit {
  RatioEstimates ratios;
  double lin_residual_rms = 0.0;
  double ang_residual_rms = 0.0;
  long rows = 0;
  double wall_seconds = 0.0;
};

/// Ordinary least squares per block and side via incremental orthogonal
/// (QR) reduction over the streamed rows; never materializes the design
/// matrix. Rows whose features and target are all exactly zero are dropped.
/// Throws InsufficientDataError when a block sees fewer rows than unknowns
/// and RankDeficientError (with the unidentifiable parameter combination
/// spelled out) when the design is singular.
ClosedFormFit fit_closed_form(const TransitionStream& stream, const SystemConfig& config,
                              Tying tying, bool include_control = false);

/// The same solve on a prebuilt batch (convenience for tests).
ClosedFormFit fit_closed_form(const TransitionBatch& batch);

/// Training schedule of the gradient path.
struct FitConfig {
  int epochs = 30;
  double initial_lr = 0.1;
  int lr_halving_period = 3;  // epochs
  int batch_size = 64;        // transitions per optimizer step
  unsigned long shuffle_seed = 1;
};

struct IterativeFit {
  RatioEstimates ratios;
  std::vector<double> loss_curve;  // full-batch MSE after each epoch
  double wall_seconds = 0.0;
  double seconds_per_epoch = 0.0;
};

/// Next-state mean-squared-error loss of the ratio vector `theta` (layout:
/// per block, linear columns then angular columns, blocks in order) on the
/// batch, with the analytic gradient written to `grad` when non-null.
/// The predicted next state integrates the regression accelerations with the
/// batch's dt; position and attitude terms propagate through the integrator,
/// so the quaternion normalization makes the loss nonlinear in theta.
double iterative_loss(const TransitionBatch& batch, const Eigen::VectorXd& theta,
                      Eigen::VectorXd* grad);

/// Offsets of each block's linear/angular column groups inside theta.
struct ThetaLayout {
  std::vector<long> lin_offset;
  std::vector<long> ang_offset;
  long size = 0;
};
ThetaLayout theta_layout(const std::vector<BlockLayout>& layout);

/// Adam on iterative_loss over minibatches, ratios initialized to 1,
/// learning rate halved every lr_halving_period epochs. Deterministic in
/// shuffle_seed. Throws NonFiniteLossError with the epoch index if the loss
/// leaves the reals.
IterativeFit fit_iterative(const TransitionBatch& batch, const FitConfig& config = {});

}  // namespace rodspring::ident
