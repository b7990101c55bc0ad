#include "rodspring/core/serialize.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>

namespace rodspring {

using nlohmann::json;

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3)
    throw ConfigError(std::string(what) + " must be a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json attachment_to_json(const AttachmentRef& ref) {
  if (ref.is_rod()) return json{{"rod", ref.index}, {"end", end_name(ref.end)}};
  return json{{"anchor", ref.index}};
}

AttachmentRef attachment_from_json(const json& j) {
  if (j.contains("anchor")) return AttachmentRef::anchor(j.at("anchor").get<int>());
  const std::string end = j.at("end").get<std::string>();
  if (end != "plus" && end != "minus")
    throw ConfigError("attachment end must be \"plus\" or \"minus\", got \"" + end + "\"");
  return AttachmentRef::rod_end(j.at("rod").get<int>(),
                                end == "plus" ? RodEnd::kPlus : RodEnd::kMinus);
}

}  // namespace

json config_to_json(const SystemConfig& config) {
  json rods = json::array();
  for (const RodSpec& r : config.topology.rods) {
    rods.push_back(json{{"half_length", r.half_length},
                        {"radius", r.radius},
                        {"mass", r.mass},
                        {"inertia", json::array({r.inertia.x(), r.inertia.y(), r.inertia.z()})}});
  }
  json springs = json::array();
  for (const SpringSpec& s : config.topology.springs) {
    springs.push_back(json{{"stiffness", s.stiffness},
                           {"damping", s.damping},
                           {"rest_length", s.rest_length},
                           {"a", attachment_to_json(s.a)},
                           {"b", attachment_to_json(s.b)}});
  }
  json anchors = json::array();
  for (const Vec3& a : config.topology.anchors) anchors.push_back(vec3_to_json(a));
  return json{{"name", config.name},
              {"gravity", vec3_to_json(config.gravity)},
              {"dt", config.dt},
              {"rods", rods},
              {"springs", springs},
              {"anchors", anchors}};
}

SystemConfig config_from_json(const json& j) {
  SystemConfig config;
  try {
    config.name = j.value("name", std::string("unnamed"));
    config.gravity = vec3_from_json(j.at("gravity"), "gravity");
    config.dt = j.at("dt").get<double>();
    for (const json& jr : j.at("rods")) {
      RodSpec r;
      r.half_length = jr.at("half_length").get<double>();
      r.radius = jr.at("radius").get<double>();
      r.mass = jr.at("mass").get<double>();
      r.inertia = vec3_from_json(jr.at("inertia"), "inertia");
      config.topology.rods.push_back(r);
    }
    for (const json& js : j.at("springs")) {
      SpringSpec s;
      s.stiffness = js.at("stiffness").get<double>();
      s.damping = js.at("damping").get<double>();
      s.rest_length = js.at("rest_length").get<double>();
      s.a = attachment_from_json(js.at("a"));
      s.b = attachment_from_json(js.at("b"));
      config.topology.springs.push_back(s);
    }
    if (j.contains("anchors"))
      for (const json& ja : j.at("anchors"))
        config.topology.anchors.push_back(vec3_from_json(ja, "anchor"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  config.validate();
  return config;
}

json state_to_json(const SystemState& state) {
  json rods = json::array();
  for (const RodState& r : state.rods) {
    rods.push_back(
        json{{"p", vec3_to_json(r.p)},
             {"v", vec3_to_json(r.v)},
             {"q", json::array({r.q.w(), r.q.x(), r.q.y(), r.q.z()})},
             {"omega", vec3_to_json(r.omega)}});
  }
  return json{{"time", state.time}, {"rods", rods}};
}

SystemState state_from_json(const json& j) {
  SystemState state;
  try {
    state.time = j.value("time", 0.0);
    for (const json& jr : j.at("rods")) {
      RodState r;
      r.p = vec3_from_json(jr.at("p"), "p");
      r.v = vec3_from_json(jr.at("v"), "v");
      const json& jq = jr.at("q");
      if (!jq.is_array() || jq.size() != 4)
        throw ConfigError("q must be a 4-element array [w,x,y,z]");
      r.q = normalized(Quat(jq[0].get<double>(), jq[1].get<double>(), jq[2].get<double>(),
                            jq[3].get<double>()));
      r.omega = vec3_from_json(jr.at("omega"), "omega");
      state.rods.push_back(r);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed state JSON: ") + e.what());
  }
  return state;
}

json scenario_to_json(const Scenario& scenario) {
  json j = config_to_json(scenario.config);
  j["initial_state"] = state_to_json(scenario.rest_state);
  return j;
}

Scenario scenario_from_json(const json& j) {
  Scenario sc;
  sc.config = config_from_json(j);
  if (j.contains("initial_state")) {
    sc.rest_state = state_from_json(j.at("initial_state"));
  } else {
    sc.rest_state.rods.resize(sc.config.topology.rods.size());
  }
  if (static_cast<int>(sc.rest_state.rods.size()) != sc.config.topology.n_rods())
    throw ConfigError("initial_state rod count does not match topology");
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file", path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON in ") + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

void save_scenario(const Scenario& scenario, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scenario file", path);
  out << scenario_to_json(scenario).dump(2) << "\n";
  if (!out) throw IoError("write failed", path);
}

std::string config_hash(const SystemConfig& config) {
  const std::string dump = config_to_json(config).dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace rodspring
