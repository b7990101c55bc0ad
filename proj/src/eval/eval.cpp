#include "rodspring/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rodspring/core/errors.hpp"

namespace rodspring::eval {

namespace {

namespace fs = std::filesystem;

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string fmt_tick(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", x);
  return buf;
}

std::string fmt_coord(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

nlohmann::json record_json(const RunRecord& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["param_names"] = r.param_names;
  j["estimates"] = vector_json(r.estimates);
  j["truth"] = vector_json(r.truth);
  j["relative_errors"] = vector_json(r.rel_errors);
  j["success"] = r.success;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing", path.string());
  out << text;
  if (!out) throw IoError("write failed", path.string());
}

}  // namespace

ErrorCurve compare_rollouts(const Trajectory& predicted, const Trajectory& reference) {
  if (predicted.states.size() != reference.states.size())
    throw HorizonMismatchError(predicted.n_steps(), reference.n_steps());
  ErrorCurve curve;
  const size_t n = reference.states.size();
  curve.pos_mse.reserve(n);
  curve.quat_mse.reserve(n);
  curve.pos_accum.reserve(n);
  curve.quat_accum.reserve(n);
  double pos_sum = 0.0, quat_sum = 0.0;
  for (size_t t = 0; t < n; ++t) {
    const SystemState& a = predicted.states[t];
    const SystemState& b = reference.states[t];
    if (a.rods.size() != b.rods.size())
      throw ConfigError("trajectories describe systems with different rod counts");
    double pos = 0.0, quat = 0.0;
    for (size_t r = 0; r < b.rods.size(); ++r) {
      pos += (a.rods[r].p - b.rods[r].p).squaredNorm();
      const Eigen::Vector4d qa = a.rods[r].q.coeffs();
      const Eigen::Vector4d qb = b.rods[r].q.coeffs();
      const double sign = qa.dot(qb) < 0.0 ? -1.0 : 1.0;  // q and -q coincide
      quat += (qa - sign * qb).squaredNorm() / 4.0;
    }
    const double n_rods = static_cast<double>(b.rods.size());
    pos /= n_rods;
    quat /= n_rods;
    pos_sum += pos;
    quat_sum += quat;
    curve.pos_mse.push_back(pos);
    curve.quat_mse.push_back(quat);
    curve.pos_accum.push_back(pos_sum);
    curve.quat_accum.push_back(quat_sum);
  }
  return curve;
}

void write_curve_csv(const std::string& path, const ErrorCurve& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing", path);
  out << "step,pos_mse,quat_mse,pos_accum,quat_accum\n";
  for (long t = 0; t < curve.n_states(); ++t)
    out << t << ',' << fmt(curve.pos_mse[t]) << ',' << fmt(curve.quat_mse[t]) << ','
        << fmt(curve.pos_accum[t]) << ',' << fmt(curve.quat_accum[t]) << '\n';
  if (!out) throw IoError("write failed", path);
}

std::string render_curves_svg(const std::vector<NamedCurve>& curves, bool quaternion,
                              bool accumulated) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  constexpr int kPaletteSize = 8;
  const double left = 70, right = 620, top = 24, bottom = 352;

  struct Series {
    std::string label;
    const std::vector<double>* values;
  };
  std::vector<Series> series;
  long n = 0;
  for (const NamedCurve& nc : curves) {
    const std::vector<double>* v =
        quaternion ? (accumulated ? &nc.curve.quat_accum : &nc.curve.quat_mse)
                   : (accumulated ? &nc.curve.pos_accum : &nc.curve.pos_mse);
    if (v->empty()) continue;
    series.push_back({nc.label, v});
    n = std::max(n, static_cast<long>(v->size()));
  }

  double max_val = 0.0;
  double min_pos = std::numeric_limits<double>::infinity();
  for (const Series& s : series)
    for (double v : *s.values) {
      max_val = std::max(max_val, v);
      if (v > 0.0) min_pos = std::min(min_pos, v);
    }
  const bool log_y = std::isfinite(min_pos) && max_val / min_pos >= 1e3;
  double y0 = log_y ? std::floor(std::log10(min_pos)) : 0.0;
  double y1 = log_y ? std::ceil(std::log10(max_val)) : max_val;
  if (y1 <= y0) y1 = y0 + 1.0;
  auto ty = [&](double v) {
    if (log_y) v = std::log10(std::max(v, min_pos));
    return bottom - (v - y0) / (y1 - y0) * (bottom - top);
  };
  auto tx = [&](long i) {
    return n > 1 ? left + static_cast<double>(i) / (n - 1) * (right - left) : left;
  };

  const std::string y_label = std::string(accumulated ? "accumulated " : "") +
                              (quaternion ? "quaternion MSE" : "position MSE") +
                              (log_y ? " (log scale)" : "");

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 400\" "
         "font-family=\"monospace\" font-size=\"12\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg += "<line x1=\"70\" y1=\"352\" x2=\"620\" y2=\"352\" stroke=\"black\"/>\n";
  svg += "<line x1=\"70\" y1=\"24\" x2=\"70\" y2=\"352\" stroke=\"black\"/>\n";
  svg += "<text x=\"300\" y=\"390\">step</text>\n";
  svg += "<text x=\"70\" y=\"14\">" + y_label + "</text>\n";

  const int y_ticks = 4;
  for (int i = 0; i <= y_ticks; ++i) {
    const double frac = static_cast<double>(i) / y_ticks;
    const double value = log_y ? std::pow(10.0, y0 + frac * (y1 - y0)) : y0 + frac * (y1 - y0);
    const double y = bottom - frac * (bottom - top);
    svg += "<line x1=\"66\" y1=\"" + fmt_coord(y) + "\" x2=\"70\" y2=\"" + fmt_coord(y) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"4\" y=\"" + fmt_coord(y + 4) + "\">" + fmt_tick(value) + "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const long step = n > 0 ? (n - 1) * i / 4 : 0;
    const double x = tx(step);
    svg += "<line x1=\"" + fmt_coord(x) + "\" y1=\"352\" x2=\"" + fmt_coord(x) +
           "\" y2=\"356\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + fmt_coord(x - 8) + "\" y=\"370\">" + std::to_string(step) +
           "</text>\n";
  }

  for (size_t s = 0; s < series.size(); ++s) {
    const std::vector<double>& v = *series[s].values;
    const long count = static_cast<long>(v.size());
    const long stride = std::max<long>(1, (count + 799) / 800);
    std::string points;
    for (long i = 0; i < count; i += stride) {
      points += fmt_coord(tx(i)) + "," + fmt_coord(ty(v[i])) + " ";
    }
    if ((count - 1) % stride != 0)
      points += fmt_coord(tx(count - 1)) + "," + fmt_coord(ty(v[count - 1]));
    const char* color = kPalette[s % kPaletteSize];
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    const double ly = top + 16 + 18.0 * static_cast<double>(s);
    svg += "<line x1=\"80\" y1=\"" + fmt_coord(ly - 4) + "\" x2=\"104\" y2=\"" +
           fmt_coord(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"110\" y=\"" + fmt_coord(ly) + "\">" + series[s].label + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void emit_report(const ProtocolResult& result, const std::string& out_dir) {
  const fs::path root = fs::path(out_dir) / result.protocol;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create directory", root.string());

  nlohmann::json agg;
  agg["protocol"] = result.report.protocol;
  agg["metric_note"] = result.report.metric_note;
  agg["tolerance"] = result.report.tolerance;
  agg["n_runs"] = result.report.runs.size();
  agg["success_ratio"] = result.report.success_ratio;
  if (!result.report.runs.empty()) {
    agg["param_names"] = result.report.runs.front().param_names;
    agg["mean_estimates"] = vector_json(result.report.mean_estimates);
    agg["std_estimates"] = vector_json(result.report.std_estimates);
  }
  if (!result.extra.is_null()) agg["diagnostics"] = result.extra;
  write_text(root / "summary.json", agg.dump(2) + "\n");

  for (const SeedResult& seed : result.seeds) {
    const fs::path dir = root / std::to_string(seed.seed);
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory", dir.string());

    nlohmann::json s;
    s["protocol"] = result.protocol;
    s["record"] = record_json(seed.record);
    if (!seed.extra.is_null()) s["diagnostics"] = seed.extra;
    write_text(dir / "summary.json", s.dump(2) + "\n");

    for (const NamedCurve& nc : seed.curves)
      write_curve_csv((dir / ("curves_" + nc.label + ".csv")).string(), nc.curve);
    if (!seed.curves.empty()) {
      write_text(dir / "plot_pos.svg", render_curves_svg(seed.curves, false, true));
      write_text(dir / "plot_quat.svg", render_curves_svg(seed.curves, true, true));
    }

    for (size_t i = 0; i < seed.fit_reports.size(); ++i) {
      const auto& [label, report] = seed.fit_reports[i];
      const std::string name = i == 0 ? "fit_report.json" : "fit_report_" + label + ".json";
      ident::save_fit_report(report, (dir / name).string());
    }
  }
}

}  // namespace rodspring::eval
