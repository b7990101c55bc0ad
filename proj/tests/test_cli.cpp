#include <doctest.h>
#include <json.hpp>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Runs the installed tool with stdout/stderr discarded; returns its exit code.
int run_cli(const std::string& args) {
  const std::string cmd = std::string(RODSPRING_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("rodspring_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json slurp_json(const fs::path& path) { return json::parse(slurp(path)); }

long line_count(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  long n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("simulate writes the promised trajectory and state counts") {
  const fs::path dir = fresh_dir("sim");
  CHECK(run_cli("simulate --preset simple --traj 3 --steps 100 --seed 7 --out " +
                dir.string()) == 0);

  const json manifest = slurp_json(dir / "data_manifest.json");
  CHECK(manifest["n_traj"].get<long>() == 3);
  CHECK(manifest["n_steps"].get<long>() == 100);
  // Header plus 3 trajectories x 101 states x 1 rod.
  CHECK(line_count(dir / "data_states.csv") == 1 + 3 * 101);
  CHECK(fs::exists(dir / "scenario.json"));
  CHECK(fs::exists(dir / "effective_config.json"));
}

TEST_CASE("identical invocations produce identical files") {
  const fs::path a = fresh_dir("det_a");
  const fs::path b = fresh_dir("det_b");
  const std::string flags = "simulate --preset icosa_nonuniform --sigma 0.2 --seed 1 "
                            "--traj 2 --steps 20 --out ";
  CHECK(run_cli(flags + a.string()) == 0);
  CHECK(run_cli(flags + b.string()) == 0);
  CHECK(slurp(a / "data_manifest.json") == slurp(b / "data_manifest.json"));
  CHECK(slurp(a / "data_states.csv") == slurp(b / "data_states.csv"));
  CHECK(slurp(a / "scenario.json") == slurp(b / "scenario.json"));
}

TEST_CASE("the nonuniform effective config lists every perturbed parameter") {
  const fs::path dir = fresh_dir("echo");
  CHECK(run_cli("simulate --preset icosa_nonuniform --sigma 0.2 --seed 1 --traj 1 --steps 5 "
                "--out " + dir.string()) == 0);
  const json config = slurp_json(dir / "effective_config.json")["config"];
  REQUIRE(config["springs"].size() == 24);
  REQUIRE(config["rods"].size() == 6);
  // 24 stiffnesses + 24 dampings + 6 masses, all actually spread out.
  double k0 = config["springs"][0]["stiffness"].get<double>();
  bool spread = false;
  for (const json& s : config["springs"])
    if (s["stiffness"].get<double>() != k0) spread = true;
  CHECK(spread);
}

TEST_CASE("closed-form identification round trips through the dataset directory") {
  const fs::path data = fresh_dir("id_data");
  const fs::path out = fresh_dir("id_out");
  REQUIRE(run_cli("simulate --preset simple --traj 5 --steps 120 --seed 3 --out " +
                  data.string()) == 0);
  CHECK(run_cli("identify --data " + data.string() + " --method ident-closed --known-mass 0=10"
                " --out " + out.string()) == 0);

  const json report = slurp_json(out / "fit_report.json");
  CHECK(report["method"].get<std::string>() == "ident-closed");
  CHECK(report["success"].get<bool>());
  CHECK(report["max_relative_error"].get<double>() < 1e-9);
  // The anchored mass propagates to exact absolute stiffness.
  const double k0 = report["absolute"]["spring_k"][0].get<double>();
  CHECK(k0 == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("exit codes separate configuration, blow-up and data failures") {
  const fs::path dir = fresh_dir("codes");
  CHECK(run_cli("protocol no_such_protocol") == 2);
  CHECK(run_cli("identify --fraction 1.5") == 2);
  CHECK(run_cli("identify --data " + (dir / "missing").string()) == 2);
  CHECK(run_cli("nonsense") == 2);
  CHECK(run_cli("simulate --preset simple --traj 1 --steps 50 --jitter-vel 1e7 --out " +
                (dir / "blow").string()) == 3);
  // One transition cannot pin down a per-element icosahedron model.
  CHECK(run_cli("identify --preset icosa_nonuniform --traj 3 --steps 1 --fraction 0.0001 "
                "--tying multiple --out " + (dir / "starved").string()) == 4);
}

TEST_CASE("the seed environment variable matches the explicit flag") {
  const fs::path a = fresh_dir("env_a");
  const fs::path b = fresh_dir("env_b");
  CHECK(run_cli("simulate --preset simple --traj 2 --steps 30 --seed 9 --out " + a.string()) ==
        0);
  const std::string env_cmd = "RODSPRING_SEED=9 " + std::string(RODSPRING_CLI) +
                              " simulate --preset simple --traj 2 --steps 30 --out " +
                              b.string() + " > /dev/null 2>&1";
  REQUIRE(std::system(env_cmd.c_str()) == 0);
  CHECK(slurp(a / "data_states.csv") == slurp(b / "data_states.csv"));

  const std::string bad_cmd = "RODSPRING_SEED=abc " + std::string(RODSPRING_CLI) +
                              " simulate > /dev/null 2>&1";
  const int status = std::system(bad_cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 2);
}
