#include "rodspring/ident/features.hpp"

#include <algorithm>
#include <memory>

#include "rodspring/core/errors.hpp"
#include "rodspring/sim/dynamics.hpp"

namespace rodspring::ident {

TransitionStream stream_of(const sim::Dataset& dataset, std::vector<sim::TransitionRef> refs) {
  // The dataset is a regeneration recipe, not stored data; copying it keeps
  // the stream self-contained.
  auto data = std::make_shared<sim::Dataset>(dataset);
  auto picked = std::make_shared<std::vector<sim::TransitionRef>>(std::move(refs));
  return [data, picked](const TransitionVisitFn& visit) {
    data->for_each_transition(*picked, [&](const sim::TransitionRef&, const SystemState& s0,
                                           const SystemState& s1,
                                           const std::vector<ControlInput>* u) {
      visit(s0, s1, u);
    });
  };
}

TransitionStream stream_of(const std::vector<Transition>& transitions) {
  auto copy = std::make_shared<std::vector<Transition>>(transitions);
  return [copy](const TransitionVisitFn& visit) {
    for (const Transition& t : *copy)
      visit(t.s0, t.s1, t.controls.empty() ? nullptr : &t.controls);
  };
}

std::vector<BlockLayout> make_layout(const TopologyGraph& topo, Tying tying, bool control) {
  std::vector<BlockLayout> layout;
  if (tying == Tying::kSingle) {
    BlockLayout b;
    b.block = 0;
    b.n_pairs = 1;  // all springs share the one (K, c) column pair
    b.control = control;
    layout.push_back(std::move(b));
    return layout;
  }
  layout.reserve(topo.n_rods());
  for (int r = 0; r < topo.n_rods(); ++r) {
    BlockLayout b;
    b.block = r;
    b.springs = topo.springs_of_rod(r);
    b.n_pairs = static_cast<int>(b.springs.size());
    b.control = control;
    layout.push_back(std::move(b));
  }
  return layout;
}

namespace {

int pair_index(const BlockLayout& block, int spring_id) {
  if (block.springs.empty()) return 0;  // Single tying
  auto it = std::lower_bound(block.springs.begin(), block.springs.end(), spring_id);
  return static_cast<int>(it - block.springs.begin());
}

}  // namespace

void emit_rows(const SystemState& s0, const SystemState& s1,
               const std::vector<ControlInput>* controls, const SystemConfig& config,
               const std::vector<BlockLayout>& layout,
               const std::function<void(RodRow&&)>& sink) {
  const TopologyGraph& topo = config.topology;
  const double dt = config.dt;
  const bool single = layout.size() == 1 && layout.front().springs.empty();

  std::vector<RodRow> rows(topo.n_rods());
  for (int r = 0; r < topo.n_rods(); ++r) {
    RodRow& row = rows[r];
    row.block = single ? 0 : r;
    const int n = layout[row.block].n_cols();
    row.lin = Eigen::Matrix3Xd::Zero(3, n);
    row.ang = Eigen::Matrix3Xd::Zero(3, n);

    const RodState& a0 = s0.rods[r];
    const RodState& a1 = s1.rods[r];
    row.y_lin = (a1.v - a0.v) / dt - config.gravity;
    row.y_pos = (a1.p - a0.p - dt * a0.v) / (dt * dt) - config.gravity;
    row.y_ang = (a1.omega - a0.omega) / dt;
    row.q0 = a0.q;
    row.q1_obs = a1.q;
    row.omega0 = a0.omega;
    if (!is_finite(row.y_lin) || !is_finite(row.y_pos) || !is_finite(row.y_ang))
      throw ConfigError("non-finite regression target for rod " + std::to_string(r));
  }

  for (int s = 0; s < topo.n_springs(); ++s) {
    const SpringSpec& spring = topo.springs[s];
    const sim::SpringObservation obs = sim::observe_spring(s, s0, topo);
    const double stretch = obs.length - spring.rest_length;
    for (const AttachmentRef* ref : {&spring.a, &spring.b}) {
      if (!ref->is_rod()) continue;
      const int r = ref->index;
      RodRow& row = rows[r];
      const BlockLayout& block = layout[row.block];
      const int pair = pair_index(block, s);
      // Restoring form: force on this end is -K dp_hat - c dv_hat with the
      // unit axis pointing away from the opposite end.
      const Vec3 u_e = (ref == &spring.b) ? obs.u : Vec3(-obs.u);
      const Vec3 dp_hat = stretch * u_e;
      const Vec3 dv_hat = obs.rate * u_e;
      const Vec3 lever =
          end_sign(ref->end) * rod_axis_world(s0.rods[r], topo.rods[r]);
      row.lin.col(2 * pair) -= dp_hat;
      row.lin.col(2 * pair + 1) -= dv_hat;
      row.ang.col(2 * pair) -= lever.cross(dp_hat);
      row.ang.col(2 * pair + 1) -= lever.cross(dv_hat);
    }
  }

  if (controls != nullptr) {
    for (int r = 0; r < topo.n_rods(); ++r) {
      const ControlInput& u = (*controls)[r];
      if (!u.active()) continue;
      RodRow& row = rows[r];
      const BlockLayout& block = layout[row.block];
      if (!block.control) continue;
      const int col = block.n_cols() - 1;
      row.lin.col(col) = u.force;
      row.ang.col(col) = u.arm.cross(u.force);
    }
  }

  for (RodRow& row : rows) sink(std::move(row));
}

TransitionBatch build_features(const TransitionStream& stream, const SystemConfig& config,
                               Tying tying, bool include_control) {
  TransitionBatch batch;
  batch.tying = tying;
  batch.dt = config.dt;
  batch.layout = make_layout(config.topology, tying, include_control);
  stream([&](const SystemState& s0, const SystemState& s1,
             const std::vector<ControlInput>* u) {
    emit_rows(s0, s1, u, config, batch.layout,
              [&](RodRow&& row) { batch.rows.push_back(std::move(row)); });
  });

  std::vector<long> scalar_rows(batch.layout.size(), 0);
  for (const RodRow& row : batch.rows) scalar_rows[row.block] += 3;
  for (const BlockLayout& block : batch.layout) {
    if (scalar_rows[block.block] < block.n_cols())
      throw InsufficientDataError(scalar_rows[block.block], block.n_cols());
  }
  return batch;
}

}  // namespace rodspring::ident
