#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rodspring/core/serialize.hpp"
#include "rodspring/ident/absolute.hpp"
#include "rodspring/ident/fit.hpp"

namespace rodspring::ident {

/// Everything a fit produces, in one serializable record: the estimates, the
/// success verdict against ground truth when it is available, residual /
/// loss diagnostics, and timing.
struct FitReport {
  std::string method;  // "ident-closed", "ident-iterative", ...
  Tying tying = Tying::kSingle;

  RatioEstimates ratios;
  std::optional<AbsoluteParams> absolute;

  std::optional<double> control_scale;

  // Diagnostics.
  std::vector<double> loss_curve;   // iterative methods; empty for closed form
  double residual_rms = 0.0;        // pooled over lin+ang blocks
  long n_rows = 0;
  double wall_seconds = 0.0;
  double seconds_per_iteration = 0.0;

  // Ground-truth comparison, filled when the dataset manifest carries the
  // generating parameters. Relative error is over the identifiable ratios.
  std::optional<double> max_relative_error;
  std::optional<bool> success;  // max_relative_error <= success_tolerance
  double success_tolerance = 0.05;

  std::string note;
};

nlohmann::json fit_report_to_json(const FitReport& report);
void save_fit_report(const FitReport& report, const std::string& path);

/// Pooled worst-case relative error of the estimated ratios against the
/// ratios implied by true parameters; the scale-invariant success metric.
double max_ratio_error(const RatioEstimates& est, const SystemConfig& truth,
                       double control_scale_true = 1.0,
                       std::optional<double> control_scale_est = std::nullopt);

}  // namespace rodspring::ident
