#include "rodspring/sim/trajectory_io.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "rodspring/core/serialize.hpp"

namespace rodspring::sim {

namespace {

/// Shortest decimal form that parses back to the same double.
std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

double to_double(const std::string& s, const std::string& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw IoError("bad numeric field '" + s + "'", path);
  return v;
}

}  // namespace

void write_states_header(std::ostream& out) {
  out << "traj,t,rod,px,py,pz,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz\n";
}

void append_states_csv(std::ostream& out, long traj_index, const Trajectory& traj) {
  for (const SystemState& st : traj.states) {
    for (size_t r = 0; r < st.rods.size(); ++r) {
      const RodState& rod = st.rods[r];
      out << traj_index << ',' << fmt(st.time) << ',' << r;
      for (double x : {rod.p.x(), rod.p.y(), rod.p.z(), rod.v.x(), rod.v.y(), rod.v.z(),
                       rod.q.w(), rod.q.x(), rod.q.y(), rod.q.z(), rod.omega.x(),
                       rod.omega.y(), rod.omega.z()})
        out << ',' << fmt(x);
      out << '\n';
    }
  }
}

void write_controls_header(std::ostream& out) {
  out << "traj,step,rod,fux,fuy,fuz,rux,ruy,ruz\n";
}

void append_controls_csv(std::ostream& out, long traj_index, const Trajectory& traj) {
  for (size_t k = 0; k < traj.controls.size(); ++k) {
    for (size_t r = 0; r < traj.controls[k].size(); ++r) {
      const ControlInput& u = traj.controls[k][r];
      out << traj_index << ',' << k << ',' << r;
      for (double x : {u.force.x(), u.force.y(), u.force.z(), u.arm.x(), u.arm.y(),
                       u.arm.z()})
        out << ',' << fmt(x);
      out << '\n';
    }
  }
}

std::vector<Trajectory> read_trajectories_csv(const std::string& states_path, int n_rods,
                                              const std::string& controls_path) {
  if (n_rods < 1) throw ConfigError("n_rods must be positive");
  std::ifstream in(states_path);
  if (!in) throw IoError("cannot open states CSV", states_path);

  std::vector<Trajectory> out;
  long current_traj = -1;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != 16) throw IoError("states row needs 16 fields, got " +
                                      std::to_string(f.size()), states_path);
    const long traj = std::strtol(f[0].c_str(), nullptr, 10);
    const int rod = static_cast<int>(std::strtol(f[2].c_str(), nullptr, 10));
    if (rod < 0 || rod >= n_rods) throw IoError("rod index out of range", states_path);
    if (traj != current_traj) {
      if (traj != static_cast<long>(out.size()))
        throw IoError("traj column must be 0,1,... in order", states_path);
      out.emplace_back();
      current_traj = traj;
    }
    Trajectory& tr = out.back();
    if (rod == 0) {
      tr.states.emplace_back();
      tr.states.back().rods.resize(n_rods);
      tr.states.back().time = to_double(f[1], states_path);
    }
    if (tr.states.empty() || static_cast<int>(tr.states.back().rods.size()) != n_rods)
      throw IoError("states rows out of order", states_path);
    RodState& rs = tr.states.back().rods[rod];
    rs.p = Vec3(to_double(f[3], states_path), to_double(f[4], states_path),
                to_double(f[5], states_path));
    rs.v = Vec3(to_double(f[6], states_path), to_double(f[7], states_path),
                to_double(f[8], states_path));
    rs.q = Quat(to_double(f[9], states_path), to_double(f[10], states_path),
                to_double(f[11], states_path), to_double(f[12], states_path));
    rs.omega = Vec3(to_double(f[13], states_path), to_double(f[14], states_path),
                    to_double(f[15], states_path));
  }

  if (!controls_path.empty()) {
    std::ifstream cin_(controls_path);
    if (!cin_) throw IoError("cannot open controls CSV", controls_path);
    std::getline(cin_, line);  // header
    while (std::getline(cin_, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> f = split_csv(line);
      if (f.size() != 9) throw IoError("controls row needs 9 fields, got " +
                                       std::to_string(f.size()), controls_path);
      const long traj = std::strtol(f[0].c_str(), nullptr, 10);
      const long step = std::strtol(f[1].c_str(), nullptr, 10);
      const int rod = static_cast<int>(std::strtol(f[2].c_str(), nullptr, 10));
      if (traj < 0 || traj >= static_cast<long>(out.size()))
        throw IoError("controls reference missing trajectory", controls_path);
      Trajectory& tr = out[traj];
      if (step < 0 || step >= tr.n_steps() || rod < 0 || rod >= n_rods)
        throw IoError("controls row out of range", controls_path);
      if (tr.controls.empty())
        tr.controls.assign(tr.n_steps(), std::vector<ControlInput>(n_rods));
      tr.controls[step][rod].force = Vec3(to_double(f[3], controls_path),
                                          to_double(f[4], controls_path),
                                          to_double(f[5], controls_path));
      tr.controls[step][rod].arm = Vec3(to_double(f[6], controls_path),
                                        to_double(f[7], controls_path),
                                        to_double(f[8], controls_path));
    }
  }
  return out;
}

DatasetFiles write_dataset(const Dataset& dataset, const std::string& out_dir,
                           const std::string& stem) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output dir", out_dir);

  DatasetFiles files;
  files.states = (fs::path(out_dir) / (stem + "_states.csv")).string();
  files.manifest = (fs::path(out_dir) / (stem + "_manifest.json")).string();

  std::ofstream states(files.states);
  if (!states) throw IoError("cannot write states CSV", files.states);
  write_states_header(states);

  std::ofstream controls;
  if (dataset.has_controls()) {
    files.controls = (fs::path(out_dir) / (stem + "_controls.csv")).string();
    controls.open(files.controls);
    if (!controls) throw IoError("cannot write controls CSV", files.controls);
    write_controls_header(controls);
  }

  for (long i = 0; i < dataset.n_traj(); ++i) {
    const Trajectory traj = dataset.trajectory(i);
    append_states_csv(states, i, traj);
    if (dataset.has_controls()) append_controls_csv(controls, i, traj);
  }
  if (!states) throw IoError("write failed", files.states);

  std::ofstream manifest(files.manifest);
  if (!manifest) throw IoError("cannot write manifest", files.manifest);
  manifest << dataset_manifest(dataset, files).dump(2) << "\n";
  return files;
}

nlohmann::json dataset_manifest(const Dataset& dataset, const DatasetFiles& files) {
  namespace fs = std::filesystem;
  auto name_of = [](const std::string& p) {
    return p.empty() ? std::string() : fs::path(p).filename().string();
  };
  auto split_json = [](Dataset::Split s) { return nlohmann::json::array({s.begin, s.end}); };
  nlohmann::json j{{"config_hash", config_hash(dataset.config())},
                   {"config_name", dataset.config().name},
                   {"n_traj", dataset.n_traj()},
                   {"n_steps", dataset.n_steps()},
                   {"dt", dataset.config().dt},
                   {"splits",
                    {{"train", split_json(dataset.train_split())},
                     {"val", split_json(dataset.val_split())},
                     {"test", split_json(dataset.test_split())}}},
                   {"files", {{"states", name_of(files.states)}}}};
  if (!files.controls.empty()) j["files"]["controls"] = name_of(files.controls);
  return j;
}

}  // namespace rodspring::sim
