#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rodspring/ident/report.hpp"

namespace rodspring::eval {

/// Pointwise rollout error over time. Quaternion differences are taken after
/// sign alignment (q and -q describe the same attitude); position entries are
/// squared-norm means over rods (m^2), quaternion entries additionally
/// average over the four components.
struct ErrorCurve {
  std::vector<double> pos_mse;
  std::vector<double> quat_mse;
  std::vector<double> pos_accum;  // running sums of the above
  std::vector<double> quat_accum;

  long n_states() const { return static_cast<long>(pos_mse.size()); }
};

/// Requires equal horizons and rod counts; throws HorizonMismatchError.
ErrorCurve compare_rollouts(const Trajectory& predicted, const Trajectory& reference);

/// One identification run judged against ground truth.
struct RunRecord {
  unsigned long seed = 0;
  std::vector<std::string> param_names;
  Eigen::VectorXd estimates;
  Eigen::VectorXd truth;
  Eigen::VectorXd rel_errors;
  bool success = false;  // every relative error within the protocol tolerance
  double seconds_per_iteration = 0.0;
  double wall_seconds = 0.0;
};

struct SuccessReport {
  std::string protocol;
  std::string metric_note;  // which scale the estimates use (ratios vs absolutes)
  double tolerance = 0.05;
  std::vector<RunRecord> runs;
  Eigen::VectorXd mean_estimates;
  Eigen::VectorXd std_estimates;
  double success_ratio = 0.0;
  double mean_seconds_per_iteration = 0.0;
};

struct NamedCurve {
  std::string label;
  ErrorCurve curve;
};

struct SeedResult {
  unsigned long seed = 0;
  RunRecord record;
  std::vector<NamedCurve> curves;
  // label -> report; the first entry is the protocol's primary fit
  std::vector<std::pair<std::string, ident::FitReport>> fit_reports;
  nlohmann::json extra;  // protocol diagnostics, deterministic fields only
};

struct ProtocolResult {
  std::string protocol;
  SuccessReport report;
  std::vector<SeedResult> seeds;
  nlohmann::json extra;  // cross-seed diagnostics (method comparisons etc.)
};

struct ProtocolOverrides {
  long n_traj = -1;      // -1 keeps the protocol default
  long n_steps = -1;
  long eval_steps = -1;
  double fraction = -1;  // data_efficiency: replace the fraction sweep
  int n_threads = 1;     // seeds evaluated in parallel when > 1
};

const std::vector<std::string>& protocol_names();

/// End to end: generate data, fit the methods the protocol dictates, evaluate
/// rollouts, aggregate success statistics. Deterministic per seed.
ProtocolResult run_protocol(const std::string& name,
                            const std::vector<unsigned long>& seeds,
                            const ProtocolOverrides& overrides = {});

/// Writes out_dir/<protocol>/summary.json plus per-seed directories holding
/// summary.json, curves_<label>.csv, plot_*.svg and fit_report[_<label>].json.
/// Summaries and curves are byte-stable across re-runs; fit reports carry
/// wall-clock diagnostics.
void emit_report(const ProtocolResult& result, const std::string& out_dir);

/// `step,pos_mse,quat_mse,pos_accum,quat_accum` rows, one per state.
void write_curve_csv(const std::string& path, const ErrorCurve& curve);

/// Deterministic line plot of one curve family (no timestamps, fixed
/// palette). Switches to a log y axis when the plotted values span three
/// decades; zeros are clamped to the smallest positive value on that axis.
std::string render_curves_svg(const std::vector<NamedCurve>& curves, bool quaternion,
                              bool accumulated);

}  // namespace rodspring::eval
