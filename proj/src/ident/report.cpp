#include "rodspring/ident/report.hpp"

#include <cmath>
#include <fstream>

#include "rodspring/core/errors.hpp"

namespace rodspring::ident {

namespace {

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

nlohmann::json block_to_json(const BlockEstimate& est) {
  nlohmann::json j = {{"block", est.block},
                   {"springs", est.springs},
                   {"k_lin", vector_to_json(est.k_lin)},
                   {"c_lin", vector_to_json(est.c_lin)},
                   {"k_ang", vector_to_json(est.k_ang)},
                   {"c_ang", vector_to_json(est.c_ang)},
                   {"lin_residual_rms", est.lin_residual_rms},
                   {"ang_residual_rms", est.ang_residual_rms},
                   {"lin_rows", est.lin_rows},
                   {"ang_rows", est.ang_rows}};
  if (est.control_lin) j["control_lin"] = *est.control_lin;
  if (est.control_ang) j["control_ang"] = *est.control_ang;
  return j;
}

}  // namespace

nlohmann::json fit_report_to_json(const FitReport& report) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const BlockEstimate& est : report.ratios.blocks) blocks.push_back(block_to_json(est));

  nlohmann::json j = {{"method", report.method},
                   {"tying", tying_name(report.tying)},
                   {"ratios", {{"blocks", blocks}}},
                   {"residual_rms", report.residual_rms},
                   {"n_rows", report.n_rows},
                   {"wall_seconds", report.wall_seconds},
                   {"seconds_per_iteration", report.seconds_per_iteration},
                   {"success_tolerance", report.success_tolerance},
                   {"note", report.note}};
  if (!report.loss_curve.empty()) j["loss_curve"] = report.loss_curve;
  if (report.control_scale) j["control_scale"] = *report.control_scale;
  if (report.max_relative_error) j["max_relative_error"] = *report.max_relative_error;
  if (report.success) j["success"] = *report.success;
  if (report.absolute) {
    const AbsoluteParams& abs = *report.absolute;
    j["absolute"] = {{"spring_k", vector_to_json(abs.params.spring_k)},
                     {"spring_c", vector_to_json(abs.params.spring_c)},
                     {"rod_mass", vector_to_json(abs.params.rod_mass)},
                     {"rod_inertia11", vector_to_json(abs.params.rod_inertia11)},
                     {"control_scale", abs.params.control_scale},
                     {"scale_identified", abs.scale_identified},
                     {"note", abs.note}};
  }
  return j;
}

void save_fit_report(const FitReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open fit report for writing", path);
  out << fit_report_to_json(report).dump(2) << "\n";
}

double max_ratio_error(const RatioEstimates& est, const SystemConfig& truth,
                       double control_scale_true,
                       std::optional<double> control_scale_est) {
  const TopologyGraph& topo = truth.topology;
  double worst = 0.0;
  auto update = [&](double estimate, double true_value) {
    if (true_value == 0.0) return;
    worst = std::max(worst, std::abs(estimate - true_value) / std::abs(true_value));
  };

  for (const BlockEstimate& block : est.blocks) {
    // Tied blocks compare against the (uniform) preset value of element 0.
    const int rod = est.tying == Tying::kSingle ? 0 : block.block;
    const double mass = topo.rods[rod].mass;
    const double inertia = topo.rods[rod].inertia.x();
    for (int i = 0; i < block.k_lin.size(); ++i) {
      const int spring = block.springs.empty() ? 0 : block.springs[i];
      const double k = topo.springs[spring].stiffness;
      const double c = topo.springs[spring].damping;
      update(block.k_lin[i], k / mass);
      update(block.c_lin[i], c / mass);
      update(block.k_ang[i], k / inertia);
      update(block.c_ang[i], c / inertia);
    }
    if (block.control_lin) update(*block.control_lin, control_scale_true / mass);
    if (block.control_ang) update(*block.control_ang, control_scale_true / inertia);
  }
  if (control_scale_est) update(*control_scale_est, control_scale_true);
  return worst;
}

}  // namespace rodspring::ident
