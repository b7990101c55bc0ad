#include "rodspring/ident/absolute.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>
#include <sstream>

#include "rodspring/core/errors.hpp"
#include "rodspring/sim/dynamics.hpp"

namespace rodspring::ident {

namespace {

double geometry_inertia_ratio(const RodSpec& rod) {
  const double h = 2.0 * rod.half_length;
  return h * h / 12.0 + rod.radius * rod.radius / 4.0;
}

/// K_s/M_r and c_s/M_r as estimated for rod r, or nullopt when the block has
/// no column for the spring.
struct RatioLookup {
  const RatioEstimates* ratios;

  std::optional<std::pair<double, double>> lin(int rod, int spring) const {
    const BlockEstimate& est = ratios->for_rod(rod);
    if (est.springs.empty()) return std::make_pair(est.k_lin[0], est.c_lin[0]);
    auto it = std::lower_bound(est.springs.begin(), est.springs.end(), spring);
    if (it == est.springs.end() || *it != spring) return std::nullopt;
    const int i = static_cast<int>(it - est.springs.begin());
    return std::make_pair(est.k_lin[i], est.c_lin[i]);
  }
};

}  // namespace

AbsoluteParams resolve_absolute_params(const RatioEstimates& ratios,
                                       const TopologyGraph& topo,
                                       const KnownScale& known) {
  const int n_rods = topo.n_rods();
  const int n_springs = topo.n_springs();
  const RatioLookup look{&ratios};
  std::ostringstream note;

  std::vector<double> mass(n_rods, 0.0);  // 0 marks unresolved
  auto seed_mass = [&](int rod, double value) {
    if (rod >= 0 && rod < n_rods && mass[rod] == 0.0 && value > 0.0) mass[rod] = value;
  };

  for (const auto& [rod, m] : known.rod_mass) seed_mass(rod, m);
  if (known.control_scale_known) {
    for (const BlockEstimate& est : ratios.blocks) {
      if (!est.control_lin || *est.control_lin == 0.0) continue;
      const double m = known.known_h / *est.control_lin;
      if (ratios.tying == Tying::kSingle) {
        for (int r = 0; r < n_rods; ++r) seed_mass(r, m);
      } else {
        seed_mass(est.block, m);
      }
    }
  }

  if (ratios.tying == Tying::kSingle) {
    // One shared mass; any single anchor fixes every rod.
    const auto it = std::find_if(mass.begin(), mass.end(), [](double m) { return m > 0.0; });
    if (it != mass.end()) std::fill(mass.begin(), mass.end(), *it);
  } else {
    // Propagate through shared springs: K_s is the same physical quantity in
    // both incident blocks, so (K_s/M_a) M_a = (K_s/M_b) M_b.
    std::deque<int> queue;
    for (int r = 0; r < n_rods; ++r)
      if (mass[r] > 0.0) queue.push_back(r);
    while (!queue.empty()) {
      const int r = queue.front();
      queue.pop_front();
      for (int s : topo.springs_of_rod(r)) {
        const SpringSpec& spring = topo.springs[s];
        for (const AttachmentRef& ref : {spring.a, spring.b}) {
          if (!ref.is_rod() || ref.index == r || mass[ref.index] > 0.0) continue;
          const auto from = look.lin(r, s);
          const auto to = look.lin(ref.index, s);
          if (!from || !to || to->first == 0.0) continue;
          mass[ref.index] = from->first * mass[r] / to->first;
          queue.push_back(ref.index);
        }
      }
    }
  }

  AbsoluteParams out;
  out.scale_identified =
      std::all_of(mass.begin(), mass.end(), [](double m) { return m > 0.0; });
  if (!out.scale_identified) {
    note << "scale unidentifiable (no mass anchor reaches rod";
    for (int r = 0; r < n_rods; ++r)
      if (mass[r] <= 0.0) note << " " << r;
    note << "); ratios passed through with unit mass. ";
    for (double& m : mass)
      if (m <= 0.0) m = 1.0;
  }

  EngineParams params;
  params.tying = ratios.tying;
  params.spring_k.setZero(n_springs);
  params.spring_c.setZero(n_springs);
  params.rod_mass.resize(n_rods);
  params.rod_inertia11.resize(n_rods);
  for (int r = 0; r < n_rods; ++r) {
    params.rod_mass[r] = mass[r];
    params.rod_inertia11[r] = mass[r] * geometry_inertia_ratio(topo.rods[r]);
  }

  for (int s = 0; s < n_springs; ++s) {
    double k_sum = 0.0, c_sum = 0.0;
    int hits = 0;
    for (const AttachmentRef& ref : {topo.springs[s].a, topo.springs[s].b}) {
      if (!ref.is_rod()) continue;
      const auto pair = look.lin(ref.index, s);
      if (!pair) continue;
      k_sum += pair->first * mass[ref.index];
      c_sum += pair->second * mass[ref.index];
      ++hits;
    }
    if (hits == 0) {
      // A spring no rod carries (anchor-to-anchor) exerts no identifiable
      // force; keep neutral values.
      params.spring_k[s] = 1.0;
      params.spring_c[s] = 0.0;
      note << "spring " << s << " touches no rod; unidentifiable. ";
      continue;
    }
    params.spring_k[s] = k_sum / hits;
    params.spring_c[s] = c_sum / hits;
  }

  if (known.control_scale_known) {
    params.control_scale = known.known_h;
  } else {
    double h_sum = 0.0;
    int h_hits = 0;
    for (const BlockEstimate& est : ratios.blocks) {
      if (!est.control_lin) continue;
      const double m =
          ratios.tying == Tying::kSingle ? mass[0] : mass[est.block];
      h_sum += *est.control_lin * m;
      ++h_hits;
    }
    if (h_hits > 0) params.control_scale = h_sum / h_hits;
  }

  note << "I33 unidentifiable from torque data (always perpendicular to the rod "
          "axis); derived from geometry instead.";
  out.note = note.str();
  out.params = std::move(params);
  return out;
}

ControlScalarFit tune_control_scalar(const TransitionStream& stream,
                                     const SystemConfig& config,
                                     const EngineParams& frozen, const FitConfig& fit) {
  // Per forced rod and transition: observed acceleration minus the frozen
  // spring/gravity model leaves h times the unit-h control contribution.
  struct HRow {
    Eigen::Matrix<double, 6, 1> f = Eigen::Matrix<double, 6, 1>::Zero();
    Eigen::Matrix<double, 6, 1> y = Eigen::Matrix<double, 6, 1>::Zero();
  };
  std::vector<HRow> rows;

  EngineParams unit = frozen;
  unit.control_scale = 1.0;
  const double dt = config.dt;

  stream([&](const SystemState& s0, const SystemState& s1,
             const std::vector<ControlInput>* u) {
    if (u == nullptr) return;
    bool any = false;
    for (const ControlInput& c : *u) any = any || c.active();
    if (!any) return;
    const auto base = sim::system_accelerations(s0, config, unit, nullptr);
    const auto forced = sim::system_accelerations(s0, config, unit, u);
    for (int r = 0; r < config.topology.n_rods(); ++r) {
      if (!(*u)[r].active()) continue;
      HRow row;
      row.f.head<3>() = forced[r].linear - base[r].linear;
      row.f.tail<3>() = forced[r].angular - base[r].angular;
      row.y.head<3>() = (s1.rods[r].v - s0.rods[r].v) / dt - base[r].linear;
      row.y.tail<3>() = (s1.rods[r].omega - s0.rods[r].omega) / dt - base[r].angular;
      rows.push_back(row);
    }
  });
  if (rows.empty()) throw NoControlDataError();

  ControlScalarFit result;
  double h = 1.0;
  double m = 0.0, v = 0.0;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  long t = 0;

  std::vector<size_t> order(rows.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(fit.shuffle_seed);

  auto full_loss = [&](double value) {
    double total = 0.0;
    for (const HRow& row : rows) total += (row.f * value - row.y).squaredNorm();
    return total / (6.0 * static_cast<double>(rows.size()));
  };

  for (int epoch = 0; epoch < fit.epochs; ++epoch) {
    const double lr = fit.initial_lr * std::pow(0.5, epoch / fit.lr_halving_period);
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(fit.batch_size)) {
      const size_t end =
          std::min(order.size(), begin + static_cast<size_t>(fit.batch_size));
      double grad = 0.0;
      for (size_t i = begin; i < end; ++i) {
        const HRow& row = rows[order[i]];
        grad += 2.0 * row.f.dot(row.f * h - row.y);
      }
      grad /= 6.0 * static_cast<double>(end - begin);
      if (!std::isfinite(grad)) throw NonFiniteLossError(epoch);
      ++t;
      m = kBeta1 * m + (1.0 - kBeta1) * grad;
      v = kBeta2 * v + (1.0 - kBeta2) * grad * grad;
      const double mc = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      const double vc = 1.0 - std::pow(kBeta2, static_cast<double>(t));
      h -= lr * (m / mc) / (std::sqrt(v / vc) + kEps);
    }
    result.trace.push_back(h);
    result.loss_curve.push_back(full_loss(h));
    if (!std::isfinite(result.loss_curve.back())) throw NonFiniteLossError(epoch);
  }

  const size_t tail = std::min<size_t>(5, result.trace.size());
  double mean = 0.0;
  for (size_t i = result.trace.size() - tail; i < result.trace.size(); ++i)
    mean += result.trace[i];
  mean /= static_cast<double>(tail);
  double var = 0.0;
  for (size_t i = result.trace.size() - tail; i < result.trace.size(); ++i)
    var += (result.trace[i] - mean) * (result.trace[i] - mean);
  result.trace_variance = var / static_cast<double>(tail);
  result.h = h;
  return result;
}

Trajectory predict_rollout(const EngineParams& params, const SystemState& initial,
                           const SystemConfig& config, long n_steps,
                           const std::vector<std::vector<ControlInput>>* controls) {
  return sim::rollout(initial, config, params, n_steps, controls);
}

}  // namespace rodspring::ident
