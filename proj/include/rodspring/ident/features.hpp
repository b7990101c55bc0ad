#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

#include "rodspring/core/params.hpp"
#include "rodspring/core/types.hpp"
#include "rodspring/sim/dataset.hpp"

namespace rodspring::ident {

/// Replayable source of (S_t, S_{t+1}, u_t) transitions. Calling the stream
/// runs the visitor over every transition, in a fixed order; fits may replay
/// it several times (closed form streams once, iterative once to build its
/// batch).
using TransitionVisitFn = std::function<void(
    const SystemState& s0, const SystemState& s1, const std::vector<ControlInput>* u)>;
using TransitionStream = std::function<void(const TransitionVisitFn&)>;

/// Stream over chosen transitions of a dataset (regenerates trajectories on
/// demand; refs must be trajectory-major).
TransitionStream stream_of(const sim::Dataset& dataset, std::vector<sim::TransitionRef> refs);

/// Stream over an in-memory list of (s0, s1, controls) transitions.
struct Transition {
  SystemState s0;
  SystemState s1;
  std::vector<ControlInput> controls;  // empty = no control forces
};
TransitionStream stream_of(const std::vector<Transition>& transitions);

/// Regression view of the dynamics, one block of unknowns per rod (Multiple
/// tying) or one global block (Single). Within a block the column layout is
/// [K_{s_0}, c_{s_0}, K_{s_1}, c_{s_1}, ...] over the listed springs (a
/// single tied pair for Single tying), ratios to the rod mass on the linear
/// side and to I11 on the angular side, plus one trailing control column
/// (h/M resp. h/I11) when controls are included.
struct BlockLayout {
  int block = 0;
  std::vector<int> springs;  // incident spring ids (empty for Single tying)
  int n_pairs = 0;           // number of (K, c) column pairs
  bool control = false;

  int n_cols() const { return 2 * n_pairs + (control ? 1 : 0); }
};

std::vector<BlockLayout> make_layout(const TopologyGraph& topo, Tying tying, bool control);

/// One rod in one transition: 3-row feature slabs and acceleration targets,
/// plus the attitude pieces the iterative path needs for its next-state loss.
struct RodRow {
  int block = 0;
  Eigen::Matrix3Xd lin;  // 3 x n_cols
  Eigen::Matrix3Xd ang;  // 3 x n_cols
  Vec3 y_lin = Vec3::Zero();  // (v1 - v0)/dt - g
  Vec3 y_pos = Vec3::Zero();  // (p1 - p0 - dt v0)/dt^2 - g; equals y_lin on self-generated data
  Vec3 y_ang = Vec3::Zero();  // (omega1 - omega0)/dt
  Quat q0 = Quat::Identity();
  Quat q1_obs = Quat::Identity();
  Vec3 omega0 = Vec3::Zero();
};

/// Computes the rows of one transition and hands them to `sink`.
/// Throws ConfigError on non-finite targets, DegenerateSpringError from
/// spring observation.
void emit_rows(const SystemState& s0, const SystemState& s1,
               const std::vector<ControlInput>* controls, const SystemConfig& config,
               const std::vector<BlockLayout>& layout,
               const std::function<void(RodRow&&)>& sink);

/// Materialized batch for the iterative path and for tests.
struct TransitionBatch {
  Tying tying = Tying::kSingle;
  double dt = 0.0;
  std::vector<BlockLayout> layout;
  std::vector<RodRow> rows;

  long n_rows() const { return static_cast<long>(rows.size()); }
};

/// include_control adds the h column when the stream carries control forces.
TransitionBatch build_features(const TransitionStream& stream, const SystemConfig& config,
                               Tying tying, bool include_control = false);

}  // namespace rodspring::ident
