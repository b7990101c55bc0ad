#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "rodspring/core/kinematics.hpp"
#include "rodspring/core/params.hpp"
#include "rodspring/core/presets.hpp"
#include "rodspring/core/serialize.hpp"
#include "rodspring/core/types.hpp"

using namespace rodspring;

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec3 node_position(const Scenario& sc, const AttachmentRef& ref) {
  if (!ref.is_rod()) return sc.config.topology.anchors.at(ref.index);
  const RodState& rod = sc.rest_state.rods.at(ref.index);
  const RodSpec& spec = sc.config.topology.rods.at(ref.index);
  return rod.p + end_sign(ref.end) * (rod.q * Vec3(0, 0, spec.half_length));
}

}  // namespace

TEST_CASE("cylinder inertia from geometry") {
  // Hand evaluation: I11 = M ((2r)^2/12 + R^2/4), I33 = M R^2/2 with
  // half_length 1, radius 0.02, mass 10:
  //   I11 = 10 (4/12 + 0.0004/4) = 3.3343333..., I33 = 10*0.0004/2 = 0.002.
  const RodSpec spec = RodSpec::from_geometry(1.0, 0.02, 10.0);
  CHECK(spec.inertia.x() == doctest::Approx(10.0 * (4.0 / 12.0 + 0.0001)).epsilon(1e-14));
  CHECK(spec.inertia.y() == spec.inertia.x());
  CHECK(spec.inertia.z() == doctest::Approx(0.002).epsilon(1e-14));
}

TEST_CASE("endpoint kinematics at rest with identity orientation") {
  RodState state;
  const RodSpec spec = RodSpec::from_geometry(1.0, 0.02, 1.0);
  const EndpointKinematics kin = endpoint_kinematics(state, spec);
  CHECK(kin.p_plus.isApprox(Vec3(0, 0, 1), 0));
  CHECK(kin.p_minus.isApprox(Vec3(0, 0, -1), 0));
  CHECK(kin.v_plus.norm() == 0.0);
  CHECK(kin.v_minus.norm() == 0.0);
}

TEST_CASE("endpoint velocity from spin") {
  // r_world = (1,0,0) via a rotation taking local +z to +x; omega = (0,0,1)
  // gives v_plus = omega x r = (0,1,0).
  RodState state;
  state.q = Quat(Eigen::AngleAxisd(kPi / 2, Vec3::UnitY()));
  state.omega = Vec3(0, 0, 1);
  const RodSpec spec = RodSpec::from_geometry(1.0, 0.02, 1.0);
  CHECK(rod_axis_world(state, spec).isApprox(Vec3(1, 0, 0), 1e-15));
  const EndpointKinematics kin = endpoint_kinematics(state, spec);
  CHECK(kin.v_plus.isApprox(Vec3(0, 1, 0), 1e-15));
  CHECK(kin.v_minus.isApprox(Vec3(0, -1, 0), 1e-15));
}

TEST_CASE("translating rod endpoints share the body velocity") {
  RodState state;
  state.v = Vec3(0.3, -0.2, 0.1);
  const RodSpec spec = RodSpec::from_geometry(0.52, 0.02, 1.0);
  const EndpointKinematics kin = endpoint_kinematics(state, spec);
  CHECK(kin.v_plus.isApprox(state.v, 0));
  CHECK(kin.v_minus.isApprox(state.v, 0));
}

TEST_CASE("topology validation rejects dangling references") {
  TopologyGraph topo;
  topo.rods.push_back(RodSpec::from_geometry(1.0, 0.02, 1.0));
  SpringSpec s;
  s.a = AttachmentRef::anchor(0);  // no anchors exist
  s.b = AttachmentRef::rod_end(0, RodEnd::kPlus);
  topo.springs.push_back(s);
  CHECK_THROWS_AS(topo.validate(), TopologyError);

  topo.anchors.push_back(Vec3::Zero());
  CHECK_NOTHROW(topo.validate());

  topo.springs[0].b = AttachmentRef::rod_end(3, RodEnd::kPlus);
  CHECK_THROWS_AS(topo.validate(), TopologyError);
}

TEST_CASE("non-physical parameters are rejected") {
  const Scenario sc = make_simple();
  EngineParams p = EngineParams::from_topology(sc.config.topology);
  CHECK_NOTHROW(p.validate());
  p.spring_k[0] = -1.0;
  CHECK_THROWS_AS(p.validate(), NonPhysicalParamsError);
  p = EngineParams::from_topology(sc.config.topology);
  p.spring_c[1] = -0.5;
  CHECK_THROWS_AS(p.validate(), NonPhysicalParamsError);
  p = EngineParams::from_topology(sc.config.topology);
  p.rod_mass[0] = 0.0;
  CHECK_THROWS_AS(p.validate(), NonPhysicalParamsError);
}

TEST_CASE("simple preset geometry") {
  const Scenario sc = make_simple();
  REQUIRE(sc.config.topology.n_rods() == 1);
  REQUIRE(sc.config.topology.n_springs() == 2);
  REQUIRE(sc.config.topology.anchors.size() == 2);
  CHECK(sc.config.gravity.norm() == 0.0);

  // Rod along +x: endpoints (+-1, 0, 0); spring lengths 1 and sqrt(2).
  const Vec3 minus_end = node_position(sc, AttachmentRef::rod_end(0, RodEnd::kMinus));
  const Vec3 plus_end = node_position(sc, AttachmentRef::rod_end(0, RodEnd::kPlus));
  CHECK(minus_end.isApprox(Vec3(-1, 0, 0), 1e-15));
  CHECK(plus_end.isApprox(Vec3(1, 0, 0), 1e-15));

  const double len0 =
      (node_position(sc, sc.config.topology.springs[0].b) -
       node_position(sc, sc.config.topology.springs[0].a)).norm();
  const double len1 =
      (node_position(sc, sc.config.topology.springs[1].b) -
       node_position(sc, sc.config.topology.springs[1].a)).norm();
  CHECK(len0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(len1 == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(sc.config.topology.springs[0].rest_length == 1.0);
  CHECK(sc.config.topology.springs[1].rest_length == 1.414);
}

TEST_CASE("icosahedron preset incidence") {
  const Scenario sc = make_icosa_uniform();
  const TopologyGraph& topo = sc.config.topology;
  REQUIRE(topo.n_rods() == 6);
  REQUIRE(topo.n_springs() == 24);
  CHECK(topo.anchors.empty());

  for (int r = 0; r < 6; ++r) {
    CHECK(topo.springs_at(r, RodEnd::kPlus).size() == 4);
    CHECK(topo.springs_at(r, RodEnd::kMinus).size() == 4);
    CHECK(topo.springs_of_rod(r).size() == 8);
  }
}

TEST_CASE("icosahedron preset golden-rectangle pose") {
  // Independent construction: the 12 rod ends must be the vertices of a
  // regular icosahedron with edge d = L/phi, and every cable must span
  // exactly one edge.
  const Scenario sc = make_icosa_uniform();
  const double length = 2.0 * sc.config.topology.rods[0].half_length;
  CHECK(length == doctest::Approx(1.04).epsilon(1e-14));
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const double edge = length / phi;

  std::vector<Vec3> nodes;
  for (int r = 0; r < 6; ++r)
    for (RodEnd end : {RodEnd::kPlus, RodEnd::kMinus})
      nodes.push_back(node_position(sc, AttachmentRef::rod_end(r, end)));

  // Every vertex sits on the common circumsphere.
  const double circum = nodes[0].norm();
  for (const Vec3& n : nodes) CHECK(n.norm() == doctest::Approx(circum).epsilon(1e-12));

  // Regular icosahedron: exactly 30 vertex pairs at edge distance.
  int at_edge = 0;
  for (size_t i = 0; i < nodes.size(); ++i)
    for (size_t j = i + 1; j < nodes.size(); ++j)
      if (std::abs((nodes[i] - nodes[j]).norm() - edge) < 1e-9) ++at_edge;
  CHECK(at_edge == 30);

  for (const SpringSpec& s : sc.config.topology.springs) {
    const double len = (node_position(sc, s.b) - node_position(sc, s.a)).norm();
    CHECK(len == doctest::Approx(edge).epsilon(1e-12));
    CHECK(s.rest_length == 0.637);
    CHECK(s.stiffness == 100.0);
    CHECK(s.damping == 10.0);
  }
  CHECK(sc.config.gravity.isApprox(Vec3(0, 0, -9.81), 0));
  for (const RodSpec& r : sc.config.topology.rods) CHECK(r.mass == 10.0);
}

TEST_CASE("non-uniform preset perturbs all 54 parameters") {
  const Scenario base = make_icosa_uniform();
  const Scenario sc = make_icosa_nonuniform(7, 0.2);
  const TopologyGraph& topo = sc.config.topology;

  int changed = 0;
  for (int s = 0; s < topo.n_springs(); ++s) {
    if (topo.springs[s].stiffness != base.config.topology.springs[s].stiffness) ++changed;
    if (topo.springs[s].damping != base.config.topology.springs[s].damping) ++changed;
    CHECK(topo.springs[s].stiffness > 0.0);
    CHECK(topo.springs[s].damping > 0.0);
  }
  for (int r = 0; r < topo.n_rods(); ++r) {
    if (topo.rods[r].mass != base.config.topology.rods[r].mass) ++changed;
    CHECK(topo.rods[r].mass > 0.0);
    // Inertia follows the perturbed mass through the cylinder formula.
    const RodSpec expect = RodSpec::from_geometry(topo.rods[r].half_length,
                                                  topo.rods[r].radius, topo.rods[r].mass);
    CHECK(topo.rods[r].inertia.x() ==
          doctest::Approx(expect.inertia.x()).epsilon(1e-14));
  }
  CHECK(changed == 54);

  // Deterministic in the seed; different seeds decorrelate.
  const Scenario again = make_icosa_nonuniform(7, 0.2);
  CHECK(again.config.topology.springs[0].stiffness == topo.springs[0].stiffness);
  const Scenario other = make_icosa_nonuniform(8, 0.2);
  CHECK(other.config.topology.springs[0].stiffness != topo.springs[0].stiffness);
}

TEST_CASE("preset lookup") {
  CHECK(is_preset_name("simple"));
  CHECK(is_preset_name("icosa_uniform"));
  CHECK(is_preset_name("icosa_nonuniform"));
  CHECK_FALSE(is_preset_name("cube"));
  CHECK_THROWS_AS(make_preset("cube"), ConfigError);
  CHECK(make_preset("icosa_uniform").config.name == "icosa_uniform");
}

TEST_CASE("config JSON round trip is exact") {
  const Scenario sc = make_icosa_nonuniform(3, 0.2);
  const nlohmann::json j = config_to_json(sc.config);
  const SystemConfig back = config_from_json(j);

  CHECK(back.name == sc.config.name);
  CHECK(back.dt == sc.config.dt);
  CHECK((back.gravity - sc.config.gravity).norm() == 0.0);
  REQUIRE(back.topology.n_springs() == sc.config.topology.n_springs());
  for (int s = 0; s < back.topology.n_springs(); ++s) {
    CHECK(back.topology.springs[s].stiffness == sc.config.topology.springs[s].stiffness);
    CHECK(back.topology.springs[s].damping == sc.config.topology.springs[s].damping);
    CHECK(back.topology.springs[s].rest_length ==
          sc.config.topology.springs[s].rest_length);
    CHECK(back.topology.springs[s].a == sc.config.topology.springs[s].a);
    CHECK(back.topology.springs[s].b == sc.config.topology.springs[s].b);
  }
  for (int r = 0; r < back.topology.n_rods(); ++r) {
    CHECK(back.topology.rods[r].mass == sc.config.topology.rods[r].mass);
    CHECK((back.topology.rods[r].inertia - sc.config.topology.rods[r].inertia).norm() == 0.0);
  }
}

TEST_CASE("scenario file round trip") {
  const Scenario sc = make_simple();
  const std::string path = "test_scenario_roundtrip.json";
  save_scenario(sc, path);
  const Scenario back = load_scenario(path);
  std::remove(path.c_str());

  CHECK(back.config.name == "simple");
  REQUIRE(back.rest_state.rods.size() == 1);
  CHECK((back.rest_state.rods[0].p - sc.rest_state.rods[0].p).norm() == 0.0);
  // Loading renormalizes q, which may flip the last bit.
  CHECK((back.rest_state.rods[0].q.coeffs() - sc.rest_state.rods[0].q.coeffs()).norm() <
        1e-15);
  CHECK(std::abs(back.rest_state.rods[0].q.norm() - 1.0) < kQuatNormTol);
}

TEST_CASE("config hash is stable and injective on edits") {
  const Scenario sc = make_simple();
  const std::string h1 = config_hash(sc.config);
  CHECK(h1 == config_hash(sc.config));
  CHECK(h1.size() == 16);

  Scenario other = sc;
  other.config.topology.springs[0].stiffness += 1e-9;
  CHECK(config_hash(other.config) != h1);
}

TEST_CASE("malformed config JSON reports a structured error") {
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"name", "x"}}), ConfigError);
  nlohmann::json j = config_to_json(make_simple().config);
  j["springs"][0]["b"]["end"] = "sideways";
  CHECK_THROWS_AS(config_from_json(j), ConfigError);
  j = config_to_json(make_simple().config);
  j["dt"] = 0.5;  // beyond the stability guard
  CHECK_THROWS_AS(config_from_json(j), ConfigError);
}
