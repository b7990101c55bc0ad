#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rodspring/blackbox/blackbox.hpp"
#include "rodspring/core/errors.hpp"
#include "rodspring/core/presets.hpp"
#include "rodspring/core/serialize.hpp"
#include "rodspring/eval/eval.hpp"
#include "rodspring/ident/absolute.hpp"
#include "rodspring/ident/report.hpp"
#include "rodspring/koopman/koopman.hpp"
#include "rodspring/sim/trajectory_io.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rodspring;

/// Seed resolution order: --seed flag, RODSPRING_SEED, 1.
unsigned long default_seed() {
  const char* env = std::getenv("RODSPRING_SEED");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (end == env || *end != '\0')
    throw ConfigError(std::string("RODSPRING_SEED must be a non-negative integer, got '") +
                      env + "'");
  return v;
}

/// Accepts "7", "1,2,5" or an inclusive range "0..9".
std::vector<unsigned long> parse_seed_list(const std::string& spec) {
  auto parse_one = [&spec](const std::string& tok) {
    try {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad seed token '" + tok + "' in --seeds '" + spec + "'");
    }
  };
  std::vector<unsigned long> out;
  const std::size_t dots = spec.find("..");
  if (dots != std::string::npos) {
    const unsigned long lo = parse_one(spec.substr(0, dots));
    const unsigned long hi = parse_one(spec.substr(dots + 2));
    if (hi < lo) throw ConfigError("empty seed range '" + spec + "'");
    for (unsigned long s = lo; s <= hi; ++s) out.push_back(s);
  } else {
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) out.push_back(parse_one(tok));
  }
  if (out.empty()) throw ConfigError("--seeds '" + spec + "' names no seeds");
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing", path);
  out << text;
  if (!out) throw IoError("write failed", path);
}

/// Prints the resolved configuration block and saves it next to the outputs,
/// so every run can be reproduced from either.
void echo_config(const json& echo, const std::string& out_dir) {
  std::printf("effective config:\n%s\n", echo.dump(2).c_str());
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "effective_config.json").string(), echo.dump(2) + "\n");
}

json vector_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

struct SceneArgs {
  std::string preset = "simple";
  std::string config_path;
  double sigma = 0.2;
};

/// A --config file wins over --preset; the echo records whichever was used.
Scenario resolve_scene(const SceneArgs& a, unsigned long seed, json* echo) {
  if (!a.config_path.empty()) {
    (*echo)["config_path"] = a.config_path;
    return load_scenario(a.config_path);
  }
  (*echo)["preset"] = a.preset;
  if (a.preset == "icosa_nonuniform") (*echo)["sigma"] = a.sigma;
  return make_preset(a.preset, seed, a.sigma);
}

// ---------------------------------------------------------------------------
// parameter tables

struct ParamRow {
  std::string name;
  double estimate = 0.0;
  std::optional<double> truth;
};

void print_rows(const std::vector<ParamRow>& rows, const char* spill_file) {
  std::printf("  %-18s %16s %16s %12s\n", "parameter", "estimate", "truth", "rel error");
  const std::size_t shown = rows.size() > 80 ? 12 : rows.size();
  for (std::size_t i = 0; i < shown; ++i) {
    const ParamRow& r = rows[i];
    if (r.truth && *r.truth != 0.0) {
      const double rel = std::abs(r.estimate - *r.truth) / std::abs(*r.truth);
      std::printf("  %-18s %16.10g %16.10g %12.2e\n", r.name.c_str(), r.estimate, *r.truth,
                  rel);
    } else {
      std::printf("  %-18s %16.10g %16s %12s\n", r.name.c_str(), r.estimate, "-", "-");
    }
  }
  if (shown < rows.size())
    std::printf("  ... %zu more rows; see %s\n", rows.size() - shown, spill_file);
}

bool all_equal(const Eigen::VectorXd& v) {
  for (long i = 1; i < v.size(); ++i)
    if (v[i] != v[0]) return false;
  return true;
}

/// Single-tying truth ratios only exist when the scene parameters are
/// uniform; otherwise the truth column is left blank.
std::vector<ParamRow> ratio_rows(const ident::RatioEstimates& est, const SystemConfig& config,
                                 bool truth_known) {
  const TopologyGraph& topo = config.topology;
  const EngineParams truth = EngineParams::from_topology(topo);
  std::vector<ParamRow> rows;
  auto push = [&rows](const std::string& name, double value, std::optional<double> tru) {
    rows.push_back({name, value, tru});
  };
  if (est.tying == Tying::kSingle) {
    const ident::BlockEstimate& b = est.blocks.at(0);
    const bool uniform = all_equal(truth.spring_k) && all_equal(truth.spring_c) &&
                         all_equal(truth.rod_mass) && all_equal(truth.rod_inertia11);
    auto tru = [&](double num, double den) {
      return truth_known && uniform ? std::optional<double>(num / den) : std::nullopt;
    };
    push("K/M", b.k_lin[0], tru(truth.spring_k[0], truth.rod_mass[0]));
    push("c/M", b.c_lin[0], tru(truth.spring_c[0], truth.rod_mass[0]));
    push("K/I11", b.k_ang[0], tru(truth.spring_k[0], truth.rod_inertia11[0]));
    push("c/I11", b.c_ang[0], tru(truth.spring_c[0], truth.rod_inertia11[0]));
    if (b.control_lin) push("h/M", *b.control_lin, tru(1.0, truth.rod_mass[0]));
    if (b.control_ang) push("h/I11", *b.control_ang, tru(1.0, truth.rod_inertia11[0]));
    return rows;
  }
  for (const ident::BlockEstimate& b : est.blocks) {
    const int rod = b.block;
    for (std::size_t i = 0; i < b.springs.size(); ++i) {
      const int s = b.springs[i];
      auto tru = [&](double num, double den) {
        return truth_known ? std::optional<double>(num / den) : std::nullopt;
      };
      const long li = static_cast<long>(i);
      const std::string sfx = "[" + std::to_string(s) + "]";
      const std::string rod_s = std::to_string(rod);
      push("K" + sfx + "/M[" + rod_s + "]", b.k_lin[li],
           tru(topo.springs[s].stiffness, truth.rod_mass[rod]));
      push("c" + sfx + "/M[" + rod_s + "]", b.c_lin[li],
           tru(topo.springs[s].damping, truth.rod_mass[rod]));
      push("K" + sfx + "/I11[" + rod_s + "]", b.k_ang[li],
           tru(topo.springs[s].stiffness, truth.rod_inertia11[rod]));
      push("c" + sfx + "/I11[" + rod_s + "]", b.c_ang[li],
           tru(topo.springs[s].damping, truth.rod_inertia11[rod]));
    }
    if (b.control_lin)
      push("h/M[" + std::to_string(rod) + "]", *b.control_lin,
           truth_known ? std::optional<double>(1.0 / truth.rod_mass[rod]) : std::nullopt);
  }
  return rows;
}

std::vector<ParamRow> absolute_rows(const EngineParams& est, const EngineParams* truth) {
  std::vector<ParamRow> rows;
  auto opt = [&truth](double v) {
    return truth != nullptr ? std::optional<double>(v) : std::nullopt;
  };
  for (int s = 0; s < est.n_springs(); ++s) {
    rows.push_back({"K[" + std::to_string(s) + "]", est.spring_k[s],
                    truth ? opt(truth->spring_k[s]) : std::nullopt});
    rows.push_back({"c[" + std::to_string(s) + "]", est.spring_c[s],
                    truth ? opt(truth->spring_c[s]) : std::nullopt});
  }
  for (int r = 0; r < est.n_rods(); ++r) {
    rows.push_back({"M[" + std::to_string(r) + "]", est.rod_mass[r],
                    truth ? opt(truth->rod_mass[r]) : std::nullopt});
    rows.push_back({"I11[" + std::to_string(r) + "]", est.rod_inertia11[r],
                    truth ? opt(truth->rod_inertia11[r]) : std::nullopt});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// dataset plumbing shared by identify

struct DataArgs {
  std::string data_dir;  // CSV-backed when set; otherwise generated in memory
  SceneArgs scene;
  long traj = 10;
  long steps = 200;
  double jitter_pos = 0.1;
  double jitter_vel = 0.5;
  long perturb_period = 0;  // 0 = unforced
  double perturb_mag = 10.0;
};

/// Either a lazily regenerated dataset or trajectories read back from CSV.
/// Both expose the same split bounds and transition access.
struct LoadedData {
  SystemConfig config;
  std::optional<sim::Dataset> dataset;
  std::vector<Trajectory> trajs;
  long train_begin = 0, train_end = 0;
  long val_begin = 0, val_end = 0;
  long test_begin = 0, test_end = 0;
  long n_traj = 0, n_steps = 0;
  bool has_controls = false;

  Trajectory trajectory(long index) const {
    return dataset ? dataset->trajectory(index) : trajs.at(index);
  }
};

LoadedData load_csv_dataset(const std::string& dir, json* echo) {
  std::vector<fs::path> manifests;
  if (!fs::is_directory(dir)) throw IoError("not a directory", dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 14 && name.substr(name.size() - 14) == "_manifest.json")
      manifests.push_back(entry.path());
  }
  if (manifests.size() != 1)
    throw ConfigError("expected exactly one *_manifest.json in " + dir + ", found " +
                      std::to_string(manifests.size()));
  const fs::path scenario_path = fs::path(dir) / "scenario.json";
  if (!fs::exists(scenario_path))
    throw ConfigError("dataset directory lacks scenario.json (generating configuration): " +
                      dir);

  std::ifstream in(manifests[0]);
  json manifest;
  in >> manifest;
  if (!in) throw IoError("cannot parse manifest", manifests[0].string());

  LoadedData data;
  data.config = load_scenario(scenario_path.string()).config;
  if (manifest["config_hash"].get<std::string>() != config_hash(data.config))
    throw ConfigError("manifest config_hash does not match scenario.json in " + dir);
  data.n_traj = manifest["n_traj"].get<long>();
  data.n_steps = manifest["n_steps"].get<long>();
  data.train_begin = manifest["splits"]["train"][0].get<long>();
  data.train_end = manifest["splits"]["train"][1].get<long>();
  data.val_begin = manifest["splits"]["val"][0].get<long>();
  data.val_end = manifest["splits"]["val"][1].get<long>();
  data.test_begin = manifest["splits"]["test"][0].get<long>();
  data.test_end = manifest["splits"]["test"][1].get<long>();

  const std::string states = (fs::path(dir) / manifest["files"]["states"].get<std::string>()).string();
  std::string controls;
  if (manifest["files"].contains("controls"))
    controls = (fs::path(dir) / manifest["files"]["controls"].get<std::string>()).string();
  data.trajs = sim::read_trajectories_csv(states, data.config.topology.n_rods(), controls);
  if (static_cast<long>(data.trajs.size()) != data.n_traj)
    throw ConfigError("states file holds " + std::to_string(data.trajs.size()) +
                      " trajectories but the manifest promises " + std::to_string(data.n_traj));
  data.has_controls = !controls.empty();
  (*echo)["data_dir"] = dir;
  (*echo)["config_hash"] = manifest["config_hash"];
  return data;
}

LoadedData load_data(const DataArgs& a, unsigned long seed, json* echo) {
  if (!a.data_dir.empty()) return load_csv_dataset(a.data_dir, echo);

  Scenario scene = resolve_scene(a.scene, seed, echo);
  LoadedData data;
  data.config = scene.config;
  std::optional<sim::PerturbationSchedule> pert;
  if (a.perturb_period > 0)
    pert = sim::PerturbationSchedule{a.perturb_period, a.perturb_mag, seed};
  data.dataset = sim::sample_dataset(scene.config, EngineParams::from_topology(scene.config.topology),
                                     scene.rest_state, a.traj, a.steps,
                                     sim::InitJitter{a.jitter_pos, a.jitter_vel}, seed,
                                     sim::SplitFractions{}, pert);
  data.n_traj = a.traj;
  data.n_steps = a.steps;
  data.train_begin = data.dataset->train_split().begin;
  data.train_end = data.dataset->train_split().end;
  data.val_begin = data.dataset->val_split().begin;
  data.val_end = data.dataset->val_split().end;
  data.test_begin = data.dataset->test_split().begin;
  data.test_end = data.dataset->test_split().end;
  data.has_controls = pert.has_value();
  (*echo)["n_traj"] = a.traj;
  (*echo)["n_steps"] = a.steps;
  (*echo)["jitter"] = {{"position", a.jitter_pos}, {"velocity", a.jitter_vel}};
  if (pert)
    (*echo)["perturbation"] = {{"period", a.perturb_period}, {"magnitude", a.perturb_mag}};
  (*echo)["config_hash"] = config_hash(scene.config);
  return data;
}

/// Training transitions of the split, optionally subsampled. The fraction is
/// measured against the full pool (train + val + test transitions) so
/// `--fraction f` on an N-transition dataset trains on about f*N rows, capped
/// by what the train split holds.
ident::TransitionStream train_stream(const LoadedData& data, double fraction,
                                     unsigned long seed, long* n_used) {
  const long pool = data.n_traj * data.n_steps;
  const long train_pool = (data.train_end - data.train_begin) * data.n_steps;
  long count = train_pool;
  if (fraction < 1.0)
    count = std::min(train_pool,
                     std::max<long>(1, static_cast<long>(std::floor(fraction * pool))));
  *n_used = count;

  if (data.dataset) {
    const sim::Dataset& ds = *data.dataset;
    std::vector<sim::TransitionRef> refs =
        count == train_pool ? ds.transitions(ds.train_split())
                            : ds.sample_transitions(ds.train_split(), count, seed + 7);
    return ident::stream_of(ds, std::move(refs));
  }

  auto picked = std::make_shared<std::vector<ident::Transition>>();
  std::vector<std::pair<long, long>> pairs;
  pairs.reserve(train_pool);
  for (long t = data.train_begin; t < data.train_end; ++t)
    for (long s = 0; s < data.trajs[t].n_steps(); ++s) pairs.emplace_back(t, s);
  if (count < static_cast<long>(pairs.size())) {
    std::mt19937_64 rng(seed + 7);
    std::vector<std::pair<long, long>> sampled;
    std::sample(pairs.begin(), pairs.end(), std::back_inserter(sampled), count, rng);
    pairs = std::move(sampled);
  }
  picked->reserve(pairs.size());
  for (const auto& [t, s] : pairs) {
    const Trajectory& traj = data.trajs[t];
    ident::Transition tr;
    tr.s0 = traj.states[s];
    tr.s1 = traj.states[s + 1];
    if (traj.has_controls()) tr.controls = traj.controls[s];
    picked->push_back(std::move(tr));
  }
  return [picked](const ident::TransitionVisitFn& visit) {
    for (const ident::Transition& tr : *picked)
      visit(tr.s0, tr.s1, tr.controls.empty() ? nullptr : &tr.controls);
  };
}

/// Validation-split transitions, used as the held-out residual set.
std::optional<ident::TransitionStream> val_stream(const LoadedData& data) {
  if (data.val_end <= data.val_begin) return std::nullopt;
  if (data.dataset) {
    const sim::Dataset& ds = *data.dataset;
    return ident::stream_of(ds, ds.transitions(ds.val_split()));
  }
  auto held = std::make_shared<std::vector<ident::Transition>>();
  for (long t = data.val_begin; t < data.val_end; ++t) {
    const Trajectory& traj = data.trajs[t];
    for (long s = 0; s < traj.n_steps(); ++s) {
      ident::Transition tr;
      tr.s0 = traj.states[s];
      tr.s1 = traj.states[s + 1];
      if (traj.has_controls()) tr.controls = traj.controls[s];
      held->push_back(std::move(tr));
    }
  }
  return [held](const ident::TransitionVisitFn& visit) {
    for (const ident::Transition& tr : *held)
      visit(tr.s0, tr.s1, tr.controls.empty() ? nullptr : &tr.controls);
  };
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  SceneArgs scene;
  long traj = 10;
  long steps = 200;
  double jitter_pos = 0.1;
  double jitter_vel = 0.5;
  long perturb_period = 0;
  double perturb_mag = 10.0;
  std::string stem = "data";
  std::string out = "out/sim";
  unsigned long seed = 1;
};

void cmd_simulate(const SimulateArgs& a) {
  json echo{{"command", "simulate"}, {"seed", a.seed},   {"n_traj", a.traj},
            {"n_steps", a.steps},    {"stem", a.stem},   {"out", a.out},
            {"jitter", {{"position", a.jitter_pos}, {"velocity", a.jitter_vel}}},
            {"split", {{"train", 0.8}, {"val", 0.1}, {"test", 0.1}}}};
  Scenario scene = resolve_scene(a.scene, a.seed, &echo);
  echo["config_hash"] = config_hash(scene.config);
  echo["config"] = config_to_json(scene.config);
  if (a.perturb_period > 0)
    echo["perturbation"] = {{"period", a.perturb_period}, {"magnitude", a.perturb_mag}};

  std::optional<sim::PerturbationSchedule> pert;
  if (a.perturb_period > 0)
    pert = sim::PerturbationSchedule{a.perturb_period, a.perturb_mag, a.seed};
  const EngineParams params = EngineParams::from_topology(scene.config.topology);
  const sim::Dataset ds =
      sim::sample_dataset(scene.config, params, scene.rest_state, a.traj, a.steps,
                          sim::InitJitter{a.jitter_pos, a.jitter_vel}, a.seed,
                          sim::SplitFractions{}, pert);

  fs::create_directories(a.out);
  const sim::DatasetFiles files = sim::write_dataset(ds, a.out, a.stem);
  save_scenario(scene, (fs::path(a.out) / "scenario.json").string());
  echo["files"] = {{"states", fs::path(files.states).filename().string()},
                   {"manifest", fs::path(files.manifest).filename().string()},
                   {"scenario", "scenario.json"}};
  if (!files.controls.empty())
    echo["files"]["controls"] = fs::path(files.controls).filename().string();

  echo_config(echo, a.out);
  std::printf("wrote %ld trajectories x %ld steps (%ld transitions) to %s\n", ds.n_traj(),
              ds.n_steps(), ds.n_transitions(), a.out.c_str());
}

// ---------------------------------------------------------------------------
// identify

struct IdentifyArgs {
  DataArgs data;
  std::string method = "ident-closed";
  std::string tying = "single";
  double fraction = 1.0;
  int epochs = 30;
  int threads = 1;
  std::string bb_params = "K,c,M";
  std::vector<std::string> known_mass;  // "rod=mass" anchors
  std::string out = "out/identify";
  unsigned long seed = 1;
};

ident::KnownScale parse_known_mass(const std::vector<std::string>& specs, int n_rods) {
  ident::KnownScale known;
  for (const std::string& spec : specs) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--known-mass wants ROD=MASS, got '" + spec + "'");
    int rod = 0;
    double mass = 0.0;
    try {
      rod = std::stoi(spec.substr(0, eq));
      mass = std::stod(spec.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("--known-mass wants ROD=MASS, got '" + spec + "'");
    }
    if (rod < 0 || rod >= n_rods)
      throw ConfigError("--known-mass rod " + std::to_string(rod) + " out of range [0, " +
                        std::to_string(n_rods) + ")");
    if (!(mass > 0.0)) throw ConfigError("--known-mass mass must be positive");
    known.rod_mass[rod] = mass;
  }
  return known;
}

std::vector<std::string> split_names(const std::string& csv) {
  std::vector<std::string> names;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove(tok.begin(), tok.end(), ' '), tok.end());
    if (!tok.empty()) names.push_back(tok);
  }
  if (names.empty()) throw ConfigError("--params names no parameters");
  return names;
}

void identify_regression(const IdentifyArgs& a, const LoadedData& data, json* echo) {
  const Tying tying = a.tying == "multiple" ? Tying::kMultiple : Tying::kSingle;
  long n_used = 0;
  const ident::TransitionStream stream = train_stream(data, a.fraction, a.seed, &n_used);
  (*echo)["transitions_used"] = n_used;
  std::printf("training on %ld transitions (%s tying, %s)\n", n_used, a.tying.c_str(),
              a.method.c_str());

  ident::FitReport report;
  report.method = a.method;
  report.tying = tying;
  if (a.method == "ident-closed") {
    const ident::ClosedFormFit fit =
        ident::fit_closed_form(stream, data.config, tying, data.has_controls);
    report.ratios = fit.ratios;
    report.residual_rms = std::sqrt(
        0.5 * (fit.lin_residual_rms * fit.lin_residual_rms +
               fit.ang_residual_rms * fit.ang_residual_rms));
    report.n_rows = fit.rows;
    report.wall_seconds = fit.wall_seconds;
  } else {
    const ident::TransitionBatch batch =
        ident::build_features(stream, data.config, tying, data.has_controls);
    ident::FitConfig fc;
    fc.epochs = a.epochs;
    fc.shuffle_seed = a.seed;
    const ident::IterativeFit fit = ident::fit_iterative(batch, fc);
    report.ratios = fit.ratios;
    report.loss_curve = fit.loss_curve;
    report.residual_rms = std::sqrt(fit.loss_curve.back());
    report.n_rows = batch.n_rows();
    report.wall_seconds = fit.wall_seconds;
    report.seconds_per_iteration = fit.seconds_per_epoch;
  }

  // Scenario configs carry the generating parameters, so truth is available.
  report.max_relative_error = ident::max_ratio_error(report.ratios, data.config);
  report.success = *report.max_relative_error <= report.success_tolerance;

  if (!a.known_mass.empty()) {
    const ident::KnownScale known = parse_known_mass(a.known_mass, data.config.topology.n_rods());
    report.absolute = ident::resolve_absolute_params(report.ratios, data.config.topology, known);
  }

  fs::create_directories(a.out);
  const std::string report_path = (fs::path(a.out) / "fit_report.json").string();
  ident::save_fit_report(report, report_path);

  std::printf("\nidentified ratios:\n");
  print_rows(ratio_rows(report.ratios, data.config, true), "fit_report.json");
  if (report.absolute) {
    const EngineParams truth = EngineParams::from_topology(data.config.topology);
    std::printf("\nabsolute parameters (%s):\n",
                report.absolute->scale_identified ? "mass anchor propagated" : "unscaled");
    std::vector<ParamRow> rows = absolute_rows(report.absolute->params, &truth);
    rows.push_back({"h", report.absolute->params.control_scale, 1.0});
    print_rows(rows, "fit_report.json");
    if (!report.absolute->note.empty()) std::printf("  note: %s\n", report.absolute->note.c_str());
  }
  std::printf("\nresidual rms %.3e over %ld rows, %.2f s\n", report.residual_rms, report.n_rows,
              report.wall_seconds);
  std::printf("max relative error %.3e -> %s (tolerance %.0f%%)\n", *report.max_relative_error,
              *report.success ? "success" : "FAILURE", 100.0 * report.success_tolerance);
  std::printf("report written to %s\n", report_path.c_str());
}

void identify_koopman(const IdentifyArgs& a, const LoadedData& data, json* echo) {
  long n_used = 0;
  const ident::TransitionStream stream = train_stream(data, a.fraction, a.seed, &n_used);
  (*echo)["transitions_used"] = n_used;
  std::printf("fitting linear lifted-feature model on %ld transitions\n", n_used);

  const koopman::KoopmanFit fit = koopman::fit_koopman(stream, data.config);
  std::optional<double> held_out;
  if (auto held = val_stream(data))
    held_out = koopman::koopman_residual(fit.model, *held, data.config);

  std::printf("  feature rows %ld, rank %ld / %d columns, train residual rms %.3e\n", fit.rows,
              fit.rank, koopman::kFeatureCount, fit.residual_rms);
  if (held_out) std::printf("  held-out residual rms %.3e\n", *held_out);
  if (fit.rank_deficient)
    std::printf("warning: lifted design is rank deficient (rank %ld of %d); the fit is the\n"
                "minimum-norm solution and rollouts may diverge from the true dynamics\n",
                fit.rank, koopman::kFeatureCount);
  const double residual = held_out ? *held_out : fit.residual_rms;
  if (residual > 1e-3)
    std::printf("warning: residual %.3e is high; the lifted basis does not explain this data\n",
                residual);

  fs::create_directories(a.out);
  json diag{{"method", "koopman"},
            {"rows", fit.rows},
            {"rank", fit.rank},
            {"columns", koopman::kFeatureCount},
            {"rank_deficient", fit.rank_deficient},
            {"train_residual_rms", fit.residual_rms},
            {"wall_seconds", fit.wall_seconds},
            {"transitions_used", n_used}};
  if (held_out) diag["held_out_residual_rms"] = *held_out;
  write_text_file((fs::path(a.out) / "koopman_fit.json").string(), diag.dump(2) + "\n");
  write_text_file((fs::path(a.out) / "koopman_model.json").string(),
                  koopman::koopman_model_to_json(fit.model).dump() + "\n");
  std::printf("diagnostics written to %s\n", (fs::path(a.out) / "koopman_fit.json").c_str());
}

void identify_blackbox(const IdentifyArgs& a, const LoadedData& data, json* echo) {
  const std::vector<std::string> names = split_names(a.bb_params);
  const blackbox::SearchSpace space = blackbox::make_space(names);
  // Coordinates not searched stay at the scenario values (a "known" quantity,
  // e.g. the true mass when --params K,c).
  const EngineParams base = EngineParams::from_topology(data.config.topology);
  const long ref_index = data.test_end > data.test_begin ? data.test_begin : data.n_traj - 1;
  const Trajectory reference = data.trajectory(ref_index);
  (*echo)["reference_trajectory"] = ref_index;
  (*echo)["search_params"] = names;

  const blackbox::LossFn loss =
      blackbox::make_trajectory_loss(space, base, reference, data.config);
  blackbox::OptResult result;
  if (a.method == "cma") {
    blackbox::CmaConfig cc;
    cc.seed = a.seed;
    cc.n_threads = a.threads;
    std::printf("CMA-ES over {%s} against trajectory %ld (%ld steps)\n", a.bb_params.c_str(),
                ref_index, reference.n_steps());
    result = blackbox::cma_es(loss, space, cc);
  } else {
    std::printf("local simplex search over {%s} against trajectory %ld (%ld steps)\n",
                a.bb_params.c_str(), ref_index, reference.n_steps());
    result = blackbox::local_search(loss, space, space.init, {});
  }

  // Truth per name only exists when that quantity is uniform across the scene.
  std::vector<ParamRow> rows;
  for (int i = 0; i < space.dim(); ++i) {
    std::optional<double> truth;
    if (names[i] == "K" && all_equal(base.spring_k)) truth = base.spring_k[0];
    if (names[i] == "c" && all_equal(base.spring_c)) truth = base.spring_c[0];
    if (names[i] == "M" && all_equal(base.rod_mass)) truth = base.rod_mass[0];
    if (names[i] == "h") truth = base.control_scale;
    rows.push_back({names[i], result.best[i], truth});
  }
  std::printf("\n");
  print_rows(rows, "opt_result.json");
  std::printf("\nbest loss %.6e after %ld iterations (%s, %.2f s)\n", result.best_loss,
              result.iterations, result.converged ? "converged" : "iteration cap",
              result.wall_seconds);

  fs::create_directories(a.out);
  json rj{{"method", a.method},
          {"param_names", names},
          {"estimates", vector_json(result.best)},
          {"best_loss", result.best_loss},
          {"iterations", result.iterations},
          {"converged", result.converged},
          {"wall_seconds", result.wall_seconds},
          {"seconds_per_iteration", result.seconds_per_iteration},
          {"reference_trajectory", ref_index}};
  bool any_truth = false;
  json truths = json::array(), rels = json::array();
  bool success = true;
  for (const ParamRow& r : rows) {
    if (!r.truth) {
      truths.push_back(nullptr);
      rels.push_back(nullptr);
      success = false;
      continue;
    }
    any_truth = true;
    const double rel = std::abs(r.estimate - *r.truth) / std::abs(*r.truth);
    truths.push_back(*r.truth);
    rels.push_back(rel);
    success = success && rel <= 0.05;
  }
  if (any_truth) {
    rj["truth"] = truths;
    rj["relative_errors"] = rels;
    rj["success"] = success;
  }
  write_text_file((fs::path(a.out) / "opt_result.json").string(), rj.dump(2) + "\n");
  blackbox::save_history_csv((fs::path(a.out) / "history.csv").string(), result, names);
  std::printf("results written to %s\n", a.out.c_str());
}

void cmd_identify(const IdentifyArgs& a) {
  if (!(a.fraction > 0.0) || a.fraction > 1.0)
    throw ConfigError("--fraction must lie in (0, 1]");
  if (!a.data.data_dir.empty() &&
      (a.data.scene.config_path.empty() == false))
    throw ConfigError("--data and --config are mutually exclusive");

  json echo{{"command", "identify"}, {"method", a.method}, {"tying", a.tying},
            {"fraction", a.fraction}, {"seed", a.seed},    {"threads", a.threads},
            {"out", a.out}};
  if (a.method == "ident-iterative") echo["epochs"] = a.epochs;
  const LoadedData data = load_data(a.data, a.seed, &echo);

  echo_config(echo, a.out);
  if (a.method == "ident-closed" || a.method == "ident-iterative")
    identify_regression(a, data, &echo);
  else if (a.method == "koopman")
    identify_koopman(a, data, &echo);
  else
    identify_blackbox(a, data, &echo);
  // Rewrite the echo with the fields the handlers appended.
  write_text_file((fs::path(a.out) / "effective_config.json").string(), echo.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// rollout

struct RolloutArgs {
  SceneArgs scene;
  long steps = 1000;
  std::string params_path;  // fit report with absolute parameters
  double h = 1.0;
  bool h_set = false;
  long perturb_period = 0;
  double perturb_mag = 10.0;
  std::string compare_dir;
  long compare_traj = 0;
  std::string out = "out/rollout";
  unsigned long seed = 1;
};

/// Absolute parameters from a saved fit report; sizes must match the scene.
EngineParams params_from_report(const std::string& path, const TopologyGraph& topo) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fit report", path);
  json j;
  in >> j;
  if (!in) throw IoError("cannot parse fit report", path);
  if (!j.contains("absolute"))
    throw ConfigError("fit report " + path +
                      " carries no absolute parameters; refit with --known-mass");
  const json& abs = j["absolute"];
  EngineParams p;
  auto read_vec = [&abs](const char* key, long expected) {
    const json& arr = abs.at(key);
    if (static_cast<long>(arr.size()) != expected)
      throw ConfigError(std::string("fit report ") + key + " holds " +
                        std::to_string(arr.size()) + " entries, scene wants " +
                        std::to_string(expected));
    Eigen::VectorXd v(expected);
    for (long i = 0; i < expected; ++i) v[i] = arr[i].get<double>();
    return v;
  };
  p.spring_k = read_vec("spring_k", topo.n_springs());
  p.spring_c = read_vec("spring_c", topo.n_springs());
  p.rod_mass = read_vec("rod_mass", topo.n_rods());
  p.rod_inertia11 = read_vec("rod_inertia11", topo.n_rods());
  p.control_scale = abs.at("control_scale").get<double>();
  return p;
}

void cmd_rollout(const RolloutArgs& a) {
  json echo{{"command", "rollout"}, {"seed", a.seed}, {"out", a.out}};
  Scenario scene = resolve_scene(a.scene, a.seed, &echo);
  echo["config_hash"] = config_hash(scene.config);
  echo["config"] = config_to_json(scene.config);

  EngineParams params = a.params_path.empty()
                            ? EngineParams::from_topology(scene.config.topology)
                            : params_from_report(a.params_path, scene.config.topology);
  echo["params_source"] = a.params_path.empty() ? "config" : a.params_path;
  if (a.h_set) params.control_scale = a.h;
  echo["control_scale"] = params.control_scale;

  SystemState initial = scene.rest_state;
  long steps = a.steps;
  std::optional<Trajectory> reference;
  if (!a.compare_dir.empty()) {
    json ref_echo;
    const LoadedData ref = load_csv_dataset(a.compare_dir, &ref_echo);
    if (ref.config.topology.n_rods() != scene.config.topology.n_rods())
      throw ConfigError("comparison dataset has " +
                        std::to_string(ref.config.topology.n_rods()) + " rods, scene has " +
                        std::to_string(scene.config.topology.n_rods()));
    if (a.compare_traj < 0 || a.compare_traj >= ref.n_traj)
      throw ConfigError("--compare-traj out of range [0, " + std::to_string(ref.n_traj) + ")");
    reference = ref.trajectory(a.compare_traj);
    initial = reference->states.front();
    steps = reference->n_steps();
    echo["compare"] = {{"dir", a.compare_dir}, {"trajectory", a.compare_traj}};
    if (reference->has_controls() && a.perturb_period > 0)
      throw ConfigError("cannot add perturbations while replaying recorded controls");
  }
  echo["n_steps"] = steps;

  std::optional<sim::PerturbationSchedule> pert;
  if (a.perturb_period > 0) {
    pert = sim::PerturbationSchedule{a.perturb_period, a.perturb_mag, a.seed};
    echo["perturbation"] = {{"period", a.perturb_period}, {"magnitude", a.perturb_mag}};
  }
  const std::vector<std::vector<ControlInput>>* replay =
      reference && reference->has_controls() ? &reference->controls : nullptr;

  const Trajectory traj = sim::rollout(initial, scene.config, params, steps, replay, pert);

  fs::create_directories(a.out);
  const std::string states_path = (fs::path(a.out) / "states.csv").string();
  {
    std::ofstream out(states_path);
    if (!out) throw IoError("cannot open for writing", states_path);
    sim::write_states_header(out);
    sim::append_states_csv(out, 0, traj);
  }
  json meta{{"config_name", scene.config.name},
            {"config_hash", config_hash(scene.config)},
            {"n_steps", steps},
            {"dt", scene.config.dt},
            {"control_scale", params.control_scale},
            {"files", {{"states", "states.csv"}}}};
  if (traj.has_controls()) {
    const std::string controls_path = (fs::path(a.out) / "controls.csv").string();
    std::ofstream out(controls_path);
    if (!out) throw IoError("cannot open for writing", controls_path);
    sim::write_controls_header(out);
    sim::append_controls_csv(out, 0, traj);
    meta["files"]["controls"] = "controls.csv";
  }

  if (reference) {
    const eval::ErrorCurve curve = eval::compare_rollouts(traj, *reference);
    eval::write_curve_csv((fs::path(a.out) / "curves.csv").string(), curve);
    const std::vector<eval::NamedCurve> named{{"rollout", curve}};
    write_text_file((fs::path(a.out) / "plot_pos.svg").string(),
                    eval::render_curves_svg(named, false, true));
    write_text_file((fs::path(a.out) / "plot_quat.svg").string(),
                    eval::render_curves_svg(named, true, true));
    meta["compare"] = {{"dir", a.compare_dir},
                       {"trajectory", a.compare_traj},
                       {"pos_accum_final", curve.pos_accum.back()},
                       {"quat_accum_final", curve.quat_accum.back()}};
    std::printf("accumulated position MSE %.6e, quaternion MSE %.6e at step %ld\n",
                curve.pos_accum.back(), curve.quat_accum.back(), steps);
  }
  write_text_file((fs::path(a.out) / "rollout.json").string(), meta.dump(2) + "\n");
  echo_config(echo, a.out);
  std::printf("rolled out %ld steps (dt %.4g s) to %s\n", steps, scene.config.dt,
              a.out.c_str());
}

// ---------------------------------------------------------------------------
// protocol

struct ProtocolArgs {
  std::string name;
  std::string seeds = "1..10";
  long traj = -1;
  long steps = -1;
  long eval_steps = -1;
  double fraction = -1.0;
  int threads = 1;
  std::string out = "out/protocols";
};

void print_success_table(const std::string& protocol, const std::string& metric_note,
                         double tolerance, std::size_t n_runs, double success_ratio,
                         const std::vector<std::string>& names,
                         const std::vector<double>& mean, const std::vector<double>& stddev) {
  std::printf("protocol %s: %zu runs, tolerance %.2g%%, success ratio %.2f\n", protocol.c_str(),
              n_runs, 100.0 * tolerance, success_ratio);
  if (!metric_note.empty()) std::printf("  metric: %s\n", metric_note.c_str());
  std::printf("  %-18s %16s %12s\n", "parameter", "mean", "std");
  const std::size_t shown = names.size() > 60 ? 10 : names.size();
  for (std::size_t i = 0; i < shown; ++i)
    std::printf("  %-18s %16.10g %12.2e\n", names[i].c_str(), mean[i], stddev[i]);
  if (shown < names.size())
    std::printf("  ... %zu more parameters; see summary.json\n", names.size() - shown);
}

/// Per-fraction means across seeds; every seed sweeps the same fractions.
void print_fraction_table(const eval::ProtocolResult& result) {
  if (result.seeds.empty() || !result.seeds[0].extra.contains("fractions")) return;
  const std::size_t n_fracs = result.seeds[0].extra["fractions"].size();
  std::printf("  %-10s %13s %16s %16s\n", "fraction", "transitions", "max rel error",
              "accum pos MSE");
  for (std::size_t f = 0; f < n_fracs; ++f) {
    double frac = 0.0, err = 0.0, accum = 0.0;
    long trans = 0;
    for (const eval::SeedResult& seed : result.seeds) {
      const json& row = seed.extra["fractions"][f];
      frac = row["fraction"].get<double>();
      trans = row["transitions"].get<long>();
      err += row["max_ratio_error"].get<double>();
      accum += row["accum_pos_final"].get<double>();
    }
    const double n = static_cast<double>(result.seeds.size());
    std::printf("  %-10g %13ld %16.3e %16.3e\n", frac, trans, err / n, accum / n);
  }
}

void print_level_table(const eval::ProtocolResult& result) {
  if (result.seeds.empty() || !result.seeds[0].extra.contains("levels")) return;
  const std::size_t n_levels = result.seeds[0].extra["levels"].size();
  std::printf("  %-8s %14s %14s %14s\n", "h true", "h fitted", "rel error", "trace var");
  for (std::size_t l = 0; l < n_levels; ++l) {
    double h_true = 0.0, h_hat = 0.0, rel = 0.0, var = 0.0;
    for (const eval::SeedResult& seed : result.seeds) {
      const json& row = seed.extra["levels"][l];
      h_true = row["h_true"].get<double>();
      h_hat += row["h_hat"].get<double>();
      rel += row["relative_error"].get<double>();
      var += row["trace_variance"].get<double>();
    }
    const double n = static_cast<double>(result.seeds.size());
    std::printf("  %-8g %14.8g %14.3e %14.3e\n", h_true, h_hat / n, rel / n, var / n);
  }
}

void cmd_protocol(const ProtocolArgs& a) {
  const std::vector<unsigned long> seeds = parse_seed_list(a.seeds);
  eval::ProtocolOverrides overrides;
  overrides.n_traj = a.traj;
  overrides.n_steps = a.steps;
  overrides.eval_steps = a.eval_steps;
  overrides.fraction = a.fraction;
  overrides.n_threads = a.threads;

  json echo{{"command", "protocol"}, {"protocol", a.name}, {"seeds", seeds},
            {"threads", a.threads},  {"out", a.out}};
  if (a.traj > 0) echo["n_traj"] = a.traj;
  if (a.steps > 0) echo["n_steps"] = a.steps;
  if (a.eval_steps > 0) echo["eval_steps"] = a.eval_steps;
  if (a.fraction > 0) echo["fraction"] = a.fraction;

  const eval::ProtocolResult result = eval::run_protocol(a.name, seeds, overrides);
  eval::emit_report(result, a.out);
  echo_config(echo, (fs::path(a.out) / a.name).string());

  const eval::SuccessReport& report = result.report;
  std::vector<double> mean(report.mean_estimates.data(),
                           report.mean_estimates.data() + report.mean_estimates.size());
  std::vector<double> stddev(report.std_estimates.data(),
                             report.std_estimates.data() + report.std_estimates.size());
  print_success_table(report.protocol, report.metric_note, report.tolerance,
                      report.runs.size(), report.success_ratio,
                      report.runs.empty() ? std::vector<std::string>{}
                                          : report.runs[0].param_names,
                      mean, stddev);
  print_fraction_table(result);
  print_level_table(result);
  if (report.mean_seconds_per_iteration > 0.0)
    std::printf("  mean seconds per iteration %.3e\n", report.mean_seconds_per_iteration);
  if (!result.extra.empty())
    std::printf("  diagnostics: %s\n", result.extra.dump().c_str());
  std::printf("reports written to %s\n", (fs::path(a.out) / a.name).c_str());
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  std::string data = "out/protocols";
  std::string out;  // re-render plots here when set
};

eval::ErrorCurve read_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open curve file", path);
  std::string line;
  if (!std::getline(in, line) || line != "step,pos_mse,quat_mse,pos_accum,quat_accum")
    throw IoError("unexpected curve header", path);
  eval::ErrorCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    long step = 0;
    double pos = 0.0, quat = 0.0, pos_acc = 0.0, quat_acc = 0.0;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf", &step, &pos, &quat, &pos_acc,
                    &quat_acc) != 5)
      throw IoError("unexpected curve row '" + line + "'", path);
    curve.pos_mse.push_back(pos);
    curve.quat_mse.push_back(quat);
    curve.pos_accum.push_back(pos_acc);
    curve.quat_accum.push_back(quat_acc);
  }
  return curve;
}

void print_saved_summary(const fs::path& root) {
  std::ifstream in(root / "summary.json");
  json summary;
  in >> summary;
  if (!in) throw IoError("cannot parse summary", (root / "summary.json").string());
  std::vector<std::string> names;
  std::vector<double> mean, stddev;
  for (const json& v : summary["param_names"]) names.push_back(v.get<std::string>());
  for (const json& v : summary["mean_estimates"]) mean.push_back(v.get<double>());
  for (const json& v : summary["std_estimates"]) stddev.push_back(v.get<double>());
  print_success_table(summary["protocol"].get<std::string>(),
                      summary.value("metric_note", std::string()),
                      summary["tolerance"].get<double>(), summary["n_runs"].get<std::size_t>(),
                      summary["success_ratio"].get<double>(), names, mean, stddev);
  if (summary.contains("diagnostics"))
    std::printf("  diagnostics: %s\n", summary["diagnostics"].dump().c_str());
}

void render_saved_curves(const fs::path& root, const fs::path& out_root) {
  for (const auto& seed_dir : fs::directory_iterator(root)) {
    if (!seed_dir.is_directory()) continue;
    std::vector<fs::path> curve_files;
    for (const auto& f : fs::directory_iterator(seed_dir.path())) {
      const std::string name = f.path().filename().string();
      if (name.rfind("curves_", 0) == 0 && name.size() > 11 &&
          name.substr(name.size() - 4) == ".csv")
        curve_files.push_back(f.path());
    }
    if (curve_files.empty()) continue;
    std::sort(curve_files.begin(), curve_files.end());
    std::vector<eval::NamedCurve> curves;
    for (const fs::path& f : curve_files) {
      const std::string name = f.filename().string();
      curves.push_back({name.substr(7, name.size() - 11), read_curve_csv(f.string())});
    }
    const fs::path dest = out_root / seed_dir.path().filename();
    fs::create_directories(dest);
    write_text_file((dest / "plot_pos.svg").string(),
                    eval::render_curves_svg(curves, false, true));
    write_text_file((dest / "plot_quat.svg").string(),
                    eval::render_curves_svg(curves, true, true));
    std::printf("  re-rendered %zu curves into %s\n", curves.size(), dest.c_str());
  }
}

void cmd_report(const ReportArgs& a) {
  json echo{{"command", "report"}, {"data", a.data}};
  if (!a.out.empty()) echo["out"] = a.out;
  std::printf("effective config:\n%s\n", echo.dump(2).c_str());

  std::vector<fs::path> roots;
  if (fs::exists(fs::path(a.data) / "summary.json")) {
    roots.push_back(a.data);
  } else if (fs::is_directory(a.data)) {
    for (const auto& entry : fs::directory_iterator(a.data))
      if (entry.is_directory() && fs::exists(entry.path() / "summary.json"))
        roots.push_back(entry.path());
    std::sort(roots.begin(), roots.end());
  }
  if (roots.empty())
    throw ConfigError("no summary.json under " + a.data +
                      "; point --data at a protocol output directory");

  for (const fs::path& root : roots) {
    print_saved_summary(root);
    if (!a.out.empty())
      render_saved_curves(root, fs::path(a.out) / root.filename());
    std::printf("\n");
  }
}

// ---------------------------------------------------------------------------

/// Error taxonomy to exit code; every path prints an actionable message.
int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const SimulationBlowupError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const RankDeficientError& e) {
    std::fprintf(stderr,
                 "error: %s\nthe data does not pin down every parameter; add transitions "
                 "(more --traj/--steps or a larger --fraction) or drop to --tying single\n",
                 e.what());
    return 4;
  } catch (const InsufficientDataError& e) {
    std::fprintf(stderr,
                 "error: %s\nadd transitions: raise --traj/--steps or --fraction\n", e.what());
    return 4;
  } catch (const NoControlDataError& e) {
    std::fprintf(stderr, "error: %s\ngenerate forced data with --perturb-period\n", e.what());
    return 4;
  } catch (const NonPhysicalParamsError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const TopologyError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

void add_scene_flags(CLI::App* cmd, SceneArgs* scene) {
  cmd->add_option("--preset", scene->preset,
                  "scenario preset: simple, icosa_uniform, icosa_nonuniform")
      ->capture_default_str();
  cmd->add_option("--config", scene->config_path, "scenario JSON file (overrides --preset)");
  cmd->add_option("--sigma", scene->sigma,
                  "parameter spread of the icosa_nonuniform preset (fraction)")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spring-rod simulation and parameter identification toolkit"};
  app.require_subcommand(1);
  app.footer(
      "exit codes: 0 success, 1 unexpected error, 2 invalid configuration or arguments,\n"
      "            3 simulation blow-up, 4 identification failure (rank-deficient or\n"
      "            insufficient data)\n"
      "RODSPRING_SEED sets the default --seed.");

  unsigned long seed = 1;
  try {
    seed = default_seed();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  SimulateArgs sim_args;
  sim_args.seed = seed;
  CLI::App* c_sim = app.add_subcommand("simulate", "sample a trajectory dataset to CSV");
  add_scene_flags(c_sim, &sim_args.scene);
  c_sim->add_option("--traj", sim_args.traj, "number of trajectories")->capture_default_str();
  c_sim->add_option("--steps", sim_args.steps, "steps per trajectory")->capture_default_str();
  c_sim->add_option("--seed", sim_args.seed, "RNG seed")->capture_default_str();
  c_sim->add_option("--jitter-pos", sim_args.jitter_pos, "initial position jitter (m)")
      ->capture_default_str();
  c_sim->add_option("--jitter-vel", sim_args.jitter_vel, "initial velocity jitter (m/s)")
      ->capture_default_str();
  c_sim->add_option("--perturb-period", sim_args.perturb_period,
                    "apply a random endpoint force every N steps (0 = off)")
      ->capture_default_str();
  c_sim->add_option("--perturb-mag", sim_args.perturb_mag, "perturbation force magnitude (N)")
      ->capture_default_str();
  c_sim->add_option("--stem", sim_args.stem, "output file stem")->capture_default_str();
  c_sim->add_option("--out", sim_args.out, "output directory")->capture_default_str();

  IdentifyArgs id_args;
  id_args.seed = seed;
  CLI::App* c_id = app.add_subcommand("identify", "fit parameters to observed trajectories");
  c_id->add_option("--data", id_args.data.data_dir,
                   "dataset directory written by simulate (default: generate in memory)");
  add_scene_flags(c_id, &id_args.data.scene);
  c_id->add_option("--traj", id_args.data.traj, "trajectories when generating")
      ->capture_default_str();
  c_id->add_option("--steps", id_args.data.steps, "steps per trajectory when generating")
      ->capture_default_str();
  c_id->add_option("--jitter-pos", id_args.data.jitter_pos, "initial position jitter (m)")
      ->capture_default_str();
  c_id->add_option("--jitter-vel", id_args.data.jitter_vel, "initial velocity jitter (m/s)")
      ->capture_default_str();
  c_id->add_option("--perturb-period", id_args.data.perturb_period,
                   "force period when generating (0 = unforced)")
      ->capture_default_str();
  c_id->add_option("--perturb-mag", id_args.data.perturb_mag, "force magnitude (N)")
      ->capture_default_str();
  c_id->add_option("--method", id_args.method, "fit method")
      ->check(CLI::IsMember({"ident-closed", "ident-iterative", "koopman", "cma",
                             "local-search"}))
      ->capture_default_str();
  c_id->add_option("--tying", id_args.tying, "parameter tying")
      ->check(CLI::IsMember({"single", "multiple"}))
      ->capture_default_str();
  c_id->add_option("--fraction", id_args.fraction,
                   "train on this fraction of the transition pool, (0, 1]")
      ->capture_default_str();
  c_id->add_option("--epochs", id_args.epochs, "epochs of the iterative method")
      ->capture_default_str();
  c_id->add_option("--threads", id_args.threads, "worker threads (CMA-ES evaluations)")
      ->capture_default_str();
  c_id->add_option("--params", id_args.bb_params,
                   "black-box search coordinates from {K, c, M, h}")
      ->capture_default_str();
  c_id->add_option("--known-mass", id_args.known_mass,
                   "ROD=MASS anchor turning ratios into absolute values (repeatable)");
  c_id->add_option("--seed", id_args.seed, "RNG seed")->capture_default_str();
  c_id->add_option("--out", id_args.out, "output directory")->capture_default_str();

  RolloutArgs ro_args;
  ro_args.seed = seed;
  CLI::App* c_ro = app.add_subcommand("rollout", "integrate one trajectory (optionally under "
                                                 "fitted parameters) and write it as CSV");
  add_scene_flags(c_ro, &ro_args.scene);
  c_ro->add_option("--steps", ro_args.steps, "steps to integrate")->capture_default_str();
  c_ro->add_option("--params", ro_args.params_path,
                   "fit_report.json with absolute parameters to roll out");
  CLI::Option* h_opt = c_ro->add_option("--control-scale", ro_args.h,
                                        "control force scale override (h)")
                           ->capture_default_str();
  c_ro->add_option("--perturb-period", ro_args.perturb_period,
                   "apply a random endpoint force every N steps (0 = off)")
      ->capture_default_str();
  c_ro->add_option("--perturb-mag", ro_args.perturb_mag, "perturbation force magnitude (N)")
      ->capture_default_str();
  c_ro->add_option("--compare", ro_args.compare_dir,
                   "dataset directory to compare against (sets the initial state, horizon "
                   "and replayed controls)");
  c_ro->add_option("--compare-traj", ro_args.compare_traj,
                   "trajectory index inside --compare")
      ->capture_default_str();
  c_ro->add_option("--seed", ro_args.seed, "RNG seed")->capture_default_str();
  c_ro->add_option("--out", ro_args.out, "output directory")->capture_default_str();

  ProtocolArgs pr_args;
  CLI::App* c_pr = app.add_subcommand("protocol", "run an end-to-end evaluation protocol");
  c_pr->add_option("name", pr_args.name, "protocol name (see `protocol list`)")->required();
  c_pr->add_option("--seeds", pr_args.seeds, "seed list: N, A,B,C or A..B")
      ->capture_default_str();
  c_pr->add_option("--traj", pr_args.traj, "override training trajectories");
  c_pr->add_option("--steps", pr_args.steps, "override steps per trajectory");
  c_pr->add_option("--eval-steps", pr_args.eval_steps, "override evaluation horizon");
  c_pr->add_option("--fraction", pr_args.fraction, "override the data_efficiency sweep");
  c_pr->add_option("--threads", pr_args.threads, "seeds evaluated in parallel")
      ->capture_default_str();
  c_pr->add_option("--out", pr_args.out, "output directory")->capture_default_str();

  ReportArgs rep_args;
  CLI::App* c_rep = app.add_subcommand("report", "print saved protocol summaries and "
                                                 "optionally re-render their plots");
  c_rep->add_option("--data", rep_args.data, "protocol output directory")
      ->capture_default_str();
  c_rep->add_option("--out", rep_args.out, "re-render plots from saved curves into this dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  ro_args.h_set = h_opt->count() > 0;

  return run_guarded([&] {
    if (app.got_subcommand(c_sim)) {
      cmd_simulate(sim_args);
    } else if (app.got_subcommand(c_id)) {
      cmd_identify(id_args);
    } else if (app.got_subcommand(c_ro)) {
      cmd_rollout(ro_args);
    } else if (app.got_subcommand(c_pr)) {
      if (pr_args.name == "list") {
        for (const std::string& name : eval::protocol_names()) std::printf("%s\n", name.c_str());
        return;
      }
      cmd_protocol(pr_args);
    } else if (app.got_subcommand(c_rep)) {
      cmd_report(rep_args);
    }
  });
}
