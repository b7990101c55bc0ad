#include "rodspring/koopman/koopman.hpp"

#include <chrono>
#include <cmath>

#include "rodspring/core/errors.hpp"
#include "rodspring/sim/dynamics.hpp"
#include "rodspring/sim/rollout.hpp"

namespace rodspring::koopman {

RodObservables observe_rod(int rod, const SystemState& state, const TopologyGraph& topo) {
  RodObservables obs;
  obs.r = rod_axis_world(state.rods[rod], topo.rods[rod]);
  for (int s : topo.springs_of_rod(rod)) {
    const SpringSpec& spring = topo.springs[s];
    const sim::SpringObservation so = sim::observe_spring(s, state, topo);
    const double stretch = so.length - spring.rest_length;
    for (const AttachmentRef* ref : {&spring.a, &spring.b}) {
      if (!ref->is_rod() || ref->index != rod) continue;
      const Vec3 u_e = (ref == &spring.b) ? so.u : Vec3(-so.u);
      if (ref->end == RodEnd::kPlus) {
        obs.dp_plus += stretch * u_e;
        obs.dv_plus += so.rate * u_e;
      } else {
        obs.dp_minus += stretch * u_e;
        obs.dv_minus += so.rate * u_e;
      }
    }
  }
  return obs;
}

int pair_feature_index(int i, int j) {
  // Pairs (i, j), i <= j, enumerated lexicographically after the constant
  // and linear blocks: offset(i) = sum_{t<i} (kBaseVars - t).
  return 1 + kBaseVars + i * kBaseVars - i * (i - 1) / 2 + (j - i);
}

Eigen::VectorXd lift(const RodObservables& obs) {
  Eigen::Matrix<double, kBaseVars, 1> x;
  x << obs.r, obs.dp_plus, obs.dp_minus, obs.dv_plus, obs.dv_minus;

  Eigen::VectorXd phi(kFeatureCount);
  phi[0] = 1.0;
  phi.segment(1, kBaseVars) = x;
  int col = 1 + kBaseVars;
  for (int i = 0; i < kBaseVars; ++i)
    for (int j = i; j < kBaseVars; ++j) phi[col++] = x[i] * x[j];
  return phi;
}

Eigen::MatrixXd least_squares_min_norm(const Eigen::MatrixXd& a, const Eigen::MatrixXd& y,
                                       double ridge, long* rank) {
  if (ridge <= 0.0) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
    if (rank != nullptr) *rank = cod.rank();
    return cod.solve(y);
  }
  const long n = a.cols();
  Eigen::MatrixXd aug(a.rows() + n, n);
  aug.topRows(a.rows()) = a;
  aug.bottomRows(n) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(aug.rows(), y.cols());
  rhs.topRows(y.rows()) = y;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(aug);
  if (rank != nullptr) *rank = cod.rank();
  return cod.solve(rhs);
}

KoopmanFit fit_koopman(const ident::TransitionStream& stream, const SystemConfig& config,
                       const KoopmanFitOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const TopologyGraph& topo = config.topology;
  const int n_rods = topo.n_rods();
  const int n_blocks = options.per_rod ? n_rods : 1;
  const double dt = config.dt;

  std::vector<std::vector<Eigen::VectorXd>> features(n_blocks);
  std::vector<std::vector<Eigen::Matrix<double, 6, 1>>> targets(n_blocks);

  stream([&](const SystemState& s0, const SystemState& s1,
             const std::vector<ControlInput>*) {
    for (int r = 0; r < n_rods; ++r) {
      const int block = options.per_rod ? r : 0;
      features[block].push_back(lift(observe_rod(r, s0, topo)));
      Eigen::Matrix<double, 6, 1> y;
      y.head<3>() = (s1.rods[r].v - s0.rods[r].v) / dt - config.gravity;
      y.tail<3>() = (s1.rods[r].omega - s0.rods[r].omega) / dt;
      if (!y.allFinite()) throw ConfigError("non-finite regression target");
      targets[block].push_back(y);
    }
  });

  KoopmanFit fit;
  fit.model.per_rod = options.per_rod;
  fit.rank = kFeatureCount;
  double res2 = 0.0;
  for (int b = 0; b < n_blocks; ++b) {
    const long rows = static_cast<long>(features[b].size());
    Eigen::MatrixXd a(rows, kFeatureCount);
    Eigen::MatrixXd y(rows, 6);
    for (long i = 0; i < rows; ++i) {
      a.row(i) = features[b][i].transpose();
      y.row(i) = targets[b][i].transpose();
    }
    long rank = 0;
    const Eigen::MatrixXd w = least_squares_min_norm(a, y, options.ridge, &rank);
    if (options.require_full_rank && rank < kFeatureCount)
      throw RankDeficientError("koopman design matrix is rank deficient", rank,
                               kFeatureCount);
    fit.rank = std::min(fit.rank, rank);
    fit.model.weights.push_back(w.transpose());  // 6 x kFeatureCount
    res2 += (a * w - y).squaredNorm();
    fit.rows += rows;
  }
  fit.rank_deficient = fit.rank < kFeatureCount;
  fit.residual_rms = fit.rows ? std::sqrt(res2 / (6.0 * fit.rows)) : 0.0;
  fit.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return fit;
}

double koopman_residual(const KoopmanModel& model, const ident::TransitionStream& stream,
                        const SystemConfig& config) {
  const TopologyGraph& topo = config.topology;
  const double dt = config.dt;
  double res2 = 0.0;
  long rows = 0;
  stream([&](const SystemState& s0, const SystemState& s1,
             const std::vector<ControlInput>*) {
    for (int r = 0; r < topo.n_rods(); ++r) {
      const Eigen::VectorXd phi = lift(observe_rod(r, s0, topo));
      Eigen::Matrix<double, 6, 1> y;
      y.head<3>() = (s1.rods[r].v - s0.rods[r].v) / dt - config.gravity;
      y.tail<3>() = (s1.rods[r].omega - s0.rods[r].omega) / dt;
      res2 += (model.for_rod(r) * phi - y).squaredNorm();
      ++rows;
    }
  });
  return rows ? std::sqrt(res2 / (6.0 * rows)) : 0.0;
}

Trajectory koopman_rollout(const KoopmanModel& model, const SystemState& initial,
                           const SystemConfig& config, long n_steps) {
  const TopologyGraph& topo = config.topology;
  const int n_rods = topo.n_rods();
  Trajectory traj;
  traj.config_ref = config.name;
  traj.states.reserve(n_steps + 1);
  traj.states.push_back(initial);

  SystemState state = initial;
  for (long k = 0; k < n_steps; ++k) {
    SystemState next;
    next.rods.resize(n_rods);
    next.time = state.time + config.dt;
    for (int r = 0; r < n_rods; ++r) {
      const Eigen::VectorXd phi = lift(observe_rod(r, state, topo));
      const Eigen::Matrix<double, 6, 1> pred = model.for_rod(r) * phi;
      const Vec3 accel = pred.head<3>() + config.gravity;
      const Vec3 alpha = pred.tail<3>();
      next.rods[r] = sim::integrate_semi_implicit(state.rods[r], accel, alpha, config.dt);
      const RodState& rod = next.rods[r];
      const double worst = std::max({rod.p.cwiseAbs().maxCoeff(),
                                     rod.v.cwiseAbs().maxCoeff(),
                                     rod.omega.cwiseAbs().maxCoeff()});
      if (!rod.finite() || worst > sim::kBlowupGuard)
        throw SimulationBlowupError(k, worst);
    }
    traj.states.push_back(next);
    state = std::move(next);
  }
  return traj;
}

nlohmann::json koopman_model_to_json(const KoopmanModel& model) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const Eigen::MatrixXd& w : model.weights) {
    nlohmann::json rows = nlohmann::json::array();
    for (long i = 0; i < w.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (long j = 0; j < w.cols(); ++j) row.push_back(w(i, j));
      rows.push_back(std::move(row));
    }
    blocks.push_back(std::move(rows));
  }
  nlohmann::json j = {
      {"basis",
       {{"max_degree", 2},
        {"base_vars", kBaseVars},
        {"features", kFeatureCount},
        {"order", "1, r, dp_plus, dp_minus, dv_plus, dv_minus, then x_i*x_j i<=j"}}},
      {"per_rod", model.per_rod}};
  j["weights"] = std::move(blocks);
  return j;
}

KoopmanModel koopman_model_from_json(const nlohmann::json& j) {
  try {
    KoopmanModel model;
    model.per_rod = j.at("per_rod").get<bool>();
    for (const auto& block : j.at("weights")) {
      Eigen::MatrixXd w(block.size(), kFeatureCount);
      long i = 0;
      for (const auto& row : block) {
        if (static_cast<int>(row.size()) != kFeatureCount)
          throw ConfigError("koopman weight row has wrong width");
        for (int c = 0; c < kFeatureCount; ++c) w(i, c) = row.at(c).get<double>();
        ++i;
      }
      if (w.rows() != 6) throw ConfigError("koopman weight block must have 6 rows");
      model.weights.push_back(std::move(w));
    }
    if (model.weights.empty()) throw ConfigError("koopman model has no weight blocks");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed koopman model JSON: ") + e.what());
  }
}

}  // namespace rodspring::koopman
