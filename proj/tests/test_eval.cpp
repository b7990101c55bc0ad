#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "rodspring/core/errors.hpp"
#include "rodspring/core/presets.hpp"
#include "rodspring/eval/eval.hpp"
#include "rodspring/sim/rollout.hpp"

using namespace rodspring;
namespace fs = std::filesystem;

namespace {

Trajectory single_rod_pair(const Vec3& dp, const Quat& q1, int n_rods = 1) {
  Trajectory t;
  SystemState s0;
  s0.rods.resize(n_rods);
  SystemState s1 = s0;
  s1.rods[0].p = dp;
  s1.rods[0].q = q1;
  t.states = {s0, s1};
  return t;
}

Trajectory kicked_rollout(long n_steps, unsigned long = 0) {
  const Scenario sc = make_simple();
  const EngineParams truth = EngineParams::from_topology(sc.config.topology);
  SystemState init = sc.rest_state;
  init.rods[0].v = Vec3(1.0, 0.0, 0.5);
  init.rods[0].omega = Vec3(0.0, 2.0, 0.0);
  return sim::rollout(init, sc.config, truth, n_steps);
}

Trajectory frozen_copy(const Trajectory& reference) {
  Trajectory frozen = reference;
  for (auto& state : frozen.states) state = reference.states.front();
  return frozen;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("rodspring_eval_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("identical trajectories produce all-zero curves") {
  const Trajectory ref = kicked_rollout(50);
  const eval::ErrorCurve curve = eval::compare_rollouts(ref, ref);
  REQUIRE(curve.n_states() == 51);
  for (long t = 0; t < curve.n_states(); ++t) {
    CHECK(curve.pos_mse[t] == 0.0);
    CHECK(curve.quat_mse[t] == 0.0);
    CHECK(curve.pos_accum[t] == 0.0);
    CHECK(curve.quat_accum[t] == 0.0);
  }
}

TEST_CASE("hand-computed two-state errors match the metric definition") {
  // One rod, displaced by (0.3, 0, -0.4) and rotated 60 degrees about z.
  const double theta = M_PI / 6.0;
  const Quat q1(Eigen::AngleAxisd(2.0 * theta, Vec3::UnitZ()));
  const Trajectory pred = single_rod_pair(Vec3(0.3, 0.0, -0.4), q1);
  const Trajectory ref = single_rod_pair(Vec3::Zero(), Quat::Identity());
  const eval::ErrorCurve curve = eval::compare_rollouts(pred, ref);

  CHECK(curve.pos_mse[0] == 0.0);
  CHECK(curve.pos_mse[1] == doctest::Approx(0.25).epsilon(1e-14));
  // |q1 - q0|^2 = (sin t)^2 + (1 - cos t)^2 = 2 - 2 cos t, averaged over the
  // four components.
  const double expect = (2.0 - 2.0 * std::cos(theta)) / 4.0;
  CHECK(curve.quat_mse[1] == doctest::Approx(expect).epsilon(1e-14));
  CHECK(curve.pos_accum[1] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(curve.quat_accum[1] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("quaternion metric survives a global sign flip") {
  const Quat q1(Eigen::AngleAxisd(0.8, Vec3(1, 2, -1).normalized()));
  Trajectory pred = single_rod_pair(Vec3::Zero(), q1);
  const Trajectory ref = pred;
  pred.states[1].rods[0].q.coeffs() *= -1.0;  // -q describes the same attitude
  const eval::ErrorCurve curve = eval::compare_rollouts(pred, ref);
  CHECK(curve.quat_mse[1] == 0.0);
  CHECK(curve.pos_mse[1] == 0.0);
}

TEST_CASE("frozen prediction against a moving reference diverges monotonically") {
  const Trajectory ref = kicked_rollout(200);
  const Trajectory frozen = frozen_copy(ref);
  const eval::ErrorCurve curve = eval::compare_rollouts(frozen, ref);
  CHECK(curve.pos_mse[0] == 0.0);
  for (long t = 1; t < curve.n_states(); ++t) {
    CHECK(curve.pos_mse[t] > 0.0);
    CHECK(curve.pos_accum[t] > curve.pos_accum[t - 1]);
  }
}

TEST_CASE("accumulated curves are non-decreasing and per-step errors non-negative") {
  const Scenario sc = make_simple();
  EngineParams wrong = EngineParams::from_topology(sc.config.topology);
  wrong.spring_k *= 1.3;
  SystemState init = sc.rest_state;
  init.rods[0].v = Vec3(0.5, -0.2, 0.4);
  const Trajectory ref = kicked_rollout(300);
  const Trajectory pred = sim::rollout(ref.states.front(), sc.config, wrong, 300);
  const eval::ErrorCurve curve = eval::compare_rollouts(pred, ref);
  for (long t = 0; t < curve.n_states(); ++t) {
    CHECK(curve.pos_mse[t] >= 0.0);
    CHECK(curve.quat_mse[t] >= 0.0);
    if (t > 0) {
      CHECK(curve.pos_accum[t] >= curve.pos_accum[t - 1]);
      CHECK(curve.quat_accum[t] >= curve.quat_accum[t - 1]);
    }
  }
  CHECK(curve.pos_accum.back() > 0.0);
}

TEST_CASE("mismatched horizons and rod counts are rejected") {
  const Trajectory ref = kicked_rollout(20);
  Trajectory shorter = ref;
  shorter.states.pop_back();
  CHECK_THROWS_AS(eval::compare_rollouts(shorter, ref), HorizonMismatchError);

  const Trajectory two_rods = single_rod_pair(Vec3::Zero(), Quat::Identity(), 2);
  const Trajectory one_rod = single_rod_pair(Vec3::Zero(), Quat::Identity(), 1);
  CHECK_THROWS_AS(eval::compare_rollouts(two_rods, one_rod), ConfigError);
}

TEST_CASE("curve CSV carries the documented schema") {
  const Trajectory ref = kicked_rollout(10);
  const eval::ErrorCurve curve = eval::compare_rollouts(frozen_copy(ref), ref);
  const fs::path dir = fresh_dir("csv");
  const fs::path path = dir / "curve.csv";
  eval::write_curve_csv(path.string(), curve);

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "step,pos_mse,quat_mse,pos_accum,quat_accum");
  long rows = 0;
  while (std::getline(in, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 4);
    ++rows;
  }
  CHECK(rows == curve.n_states());
}

TEST_CASE("the SVG plot names both series and stays deterministic") {
  eval::NamedCurve a{"alpha", {}};
  eval::NamedCurve b{"beta", {}};
  for (int t = 0; t < 50; ++t) {
    const double x = 1e-6 * (t + 1);
    a.curve.pos_accum.push_back(x);
    b.curve.pos_accum.push_back(2.0 * x);
  }
  const std::string svg = eval::render_curves_svg({a, b}, false, true);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("alpha") != std::string::npos);
  CHECK(svg.find("beta") != std::string::npos);
  long polylines = 0;
  for (size_t at = svg.find("<polyline"); at != std::string::npos;
       at = svg.find("<polyline", at + 1))
    ++polylines;
  CHECK(polylines == 2);
  CHECK(svg == eval::render_curves_svg({a, b}, false, true));

  // Three decades of spread flips the y axis to log.
  eval::NamedCurve wide{"wide", {}};
  for (int t = 0; t < 50; ++t) wide.curve.pos_accum.push_back(std::pow(10.0, -6.0 + 0.2 * t));
  CHECK(eval::render_curves_svg({wide}, false, true).find("log scale") != std::string::npos);
  CHECK(svg.find("log scale") == std::string::npos);
}

TEST_CASE("unknown protocol names are rejected with the catalogue") {
  CHECK_THROWS_AS(eval::run_protocol("fig5", {1}), ConfigError);
  try {
    eval::run_protocol("fig5", {1});
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("data_efficiency") != std::string::npos);
    CHECK(what.find("simple_ratio") != std::string::npos);
  }
  CHECK_THROWS_AS(eval::run_protocol("simple_ratio", {}), ConfigError);
  CHECK(eval::protocol_names().size() == 6);
}

TEST_CASE("known-mass protocol at toy scale recovers the spring constants") {
  eval::ProtocolOverrides small;
  small.n_traj = 6;
  small.n_steps = 150;
  small.eval_steps = 300;
  const eval::ProtocolResult result = eval::run_protocol("simple_known_M", {1}, small);

  CHECK(result.protocol == "simple_known_M");
  REQUIRE(result.report.runs.size() == 1);
  const eval::RunRecord& run = result.report.runs.front();
  REQUIRE(run.param_names == std::vector<std::string>{"K", "c"});
  CHECK(run.estimates[0] == doctest::Approx(100.0).epsilon(5e-3));
  CHECK(run.estimates[1] == doctest::Approx(10.0).epsilon(5e-3));
  CHECK(run.success);
  CHECK(result.report.success_ratio == 1.0);
  CHECK(result.extra.contains("cma_success_ratio"));
  CHECK(result.extra.contains("local_search_success_ratio"));
  const auto& diag = result.seeds.front().extra;
  REQUIRE(diag.contains("cma"));
  CHECK(diag["cma"]["estimates"].size() == 2);
}

TEST_CASE("protocols are deterministic and thread-count invariant") {
  eval::ProtocolOverrides small;
  small.n_traj = 5;
  small.n_steps = 100;
  small.eval_steps = 150;
  const auto once = eval::run_protocol("simple_known_M", {2, 3}, small);
  eval::ProtocolOverrides threaded = small;
  threaded.n_threads = 2;
  const auto twice = eval::run_protocol("simple_known_M", {2, 3}, threaded);

  REQUIRE(once.seeds.size() == twice.seeds.size());
  for (size_t i = 0; i < once.seeds.size(); ++i) {
    CHECK(once.seeds[i].record.estimates == twice.seeds[i].record.estimates);
    CHECK(once.seeds[i].extra.dump() == twice.seeds[i].extra.dump());
  }
  CHECK(once.report.mean_estimates == twice.report.mean_estimates);
  CHECK(once.report.success_ratio == twice.report.success_ratio);
  CHECK(once.extra.dump() == twice.extra.dump());
}

TEST_CASE("uniform tensegrity protocol emits byte-stable reports") {
  eval::ProtocolOverrides small;
  small.n_traj = 6;
  small.n_steps = 60;
  small.eval_steps = 120;
  const auto result = eval::run_protocol("icosa_uniform", {4}, small);

  REQUIRE(!result.seeds.empty());
  const eval::SeedResult& seed = result.seeds.front();
  REQUIRE(!seed.curves.empty());
  CHECK(seed.curves.front().label == "ident");
  CHECK(seed.curves.front().curve.n_states() == 121);
  CHECK(seed.extra.contains("ident_below_koopman"));
  CHECK(seed.extra["koopman"].contains("rank"));

  const fs::path dir_a = fresh_dir("report_a");
  const fs::path dir_b = fresh_dir("report_b");
  eval::emit_report(result, dir_a.string());
  eval::emit_report(result, dir_b.string());

  const fs::path root_a = dir_a / "icosa_uniform";
  REQUIRE(fs::exists(root_a / "summary.json"));
  const fs::path seed_a = root_a / "4";
  REQUIRE(fs::exists(seed_a / "summary.json"));
  REQUIRE(fs::exists(seed_a / "curves_ident.csv"));
  REQUIRE(fs::exists(seed_a / "plot_pos.svg"));
  REQUIRE(fs::exists(seed_a / "plot_quat.svg"));
  REQUIRE(fs::exists(seed_a / "fit_report.json"));

  const fs::path seed_b = dir_b / "icosa_uniform" / "4";
  CHECK(slurp(root_a / "summary.json") == slurp(dir_b / "icosa_uniform" / "summary.json"));
  CHECK(slurp(seed_a / "summary.json") == slurp(seed_b / "summary.json"));
  CHECK(slurp(seed_a / "curves_ident.csv") == slurp(seed_b / "curves_ident.csv"));
  CHECK(slurp(seed_a / "plot_pos.svg") == slurp(seed_b / "plot_pos.svg"));
}

TEST_CASE("reports without curves write summaries but no plots") {
  eval::ProtocolResult result;
  result.protocol = "simple_known_M";
  eval::SeedResult seed;
  seed.seed = 9;
  seed.record.seed = 9;
  seed.record.param_names = {"K"};
  seed.record.estimates = Eigen::VectorXd::Constant(1, 100.0);
  seed.record.truth = Eigen::VectorXd::Constant(1, 100.0);
  seed.record.rel_errors = Eigen::VectorXd::Zero(1);
  seed.record.success = true;
  result.seeds.push_back(seed);
  result.report.protocol = result.protocol;
  result.report.runs.push_back(seed.record);
  result.report.mean_estimates = seed.record.estimates;
  result.report.std_estimates = Eigen::VectorXd::Zero(1);
  result.report.success_ratio = 1.0;

  const fs::path dir = fresh_dir("no_curves");
  eval::emit_report(result, dir.string());
  const fs::path seed_dir = dir / "simple_known_M" / "9";
  CHECK(fs::exists(seed_dir / "summary.json"));
  long plot_files = 0;
  for (const auto& entry : fs::directory_iterator(seed_dir))
    if (entry.path().extension() == ".svg" || entry.path().extension() == ".csv") ++plot_files;
  CHECK(plot_files == 0);
}
