#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>

#include "json.hpp"
#include "metaradar/localizer.hpp"

namespace metaradar {

// Scene document: geometry plus the channel and localizer parameter sections.
struct SceneDocument {
  Scene scene;
  ChannelParams channel;
  LocalizerParams localizer;
};

namespace detail {

using Json = nlohmann::json;

[[noreturn]] inline void bad_doc(const std::string& msg) { throw std::runtime_error(msg); }

// Misspelled keys fail loudly instead of silently falling back to defaults.
inline void reject_unknown_keys(const Json& j, const std::string& where,
                                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) bad_doc("unknown key '" + it.key() + "' in " + where);
  }
}

inline const Json& require(const Json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) bad_doc(where + " needs a '" + key + "' entry");
  return *it;
}

inline double as_number(const Json& j, const std::string& where) {
  if (!j.is_number()) bad_doc(where + " must be a number");
  return j.get<double>();
}

inline int as_int(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) bad_doc(where + " must be an integer");
  return j.get<int>();
}

inline bool as_bool(const Json& j, const std::string& where) {
  if (!j.is_boolean()) bad_doc(where + " must be a boolean");
  return j.get<bool>();
}

inline Vec3 as_vec3(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number()) {
    bad_doc(where + " must be an array of three numbers");
  }
  return Vec3{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) bad_doc("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    bad_doc(path.string() + ": " + e.what());
  }
}

}  // namespace detail

inline SceneDocument parse_scene_document(const detail::Json& doc) {
  using detail::as_bool;
  using detail::as_int;
  using detail::as_number;
  using detail::as_vec3;
  using detail::bad_doc;
  using detail::require;
  if (!doc.is_object()) bad_doc("scene document must be a JSON object");
  detail::reject_unknown_keys(doc, "scene document",
                              {"grid", "surface", "emitter", "users", "channel", "localizer"});
  SceneDocument out;

  const auto& grid = require(doc, "grid", "scene document");
  if (!grid.is_object()) bad_doc("'grid' must be an object");
  detail::reject_unknown_keys(grid, "'grid'", {"origin", "edge_m", "dims"});
  out.scene.grid.origin = as_vec3(require(grid, "origin", "'grid'"), "grid.origin");
  out.scene.grid.edge = as_number(require(grid, "edge_m", "'grid'"), "grid.edge_m");
  const auto& dims = require(grid, "dims", "'grid'");
  if (!dims.is_array() || dims.size() != 3) bad_doc("grid.dims must be an array of three integers");
  out.scene.grid.nx = as_int(dims[0], "grid.dims[0]");
  out.scene.grid.ny = as_int(dims[1], "grid.dims[1]");
  out.scene.grid.nz = as_int(dims[2], "grid.dims[2]");

  const auto& surface = require(doc, "surface", "scene document");
  if (!surface.is_object()) bad_doc("'surface' must be an object");
  detail::reject_unknown_keys(surface, "'surface'", {"center", "normal", "rows", "cols", "pitch_m"});
  out.scene.surface.center = as_vec3(require(surface, "center", "'surface'"), "surface.center");
  if (surface.contains("normal")) out.scene.surface.normal = as_vec3(surface["normal"], "surface.normal");
  if (surface.contains("rows")) out.scene.surface.rows = as_int(surface["rows"], "surface.rows");
  if (surface.contains("cols")) out.scene.surface.cols = as_int(surface["cols"], "surface.cols");
  if (surface.contains("pitch_m")) out.scene.surface.pitch = as_number(surface["pitch_m"], "surface.pitch_m");

  const auto& emitter = require(doc, "emitter", "scene document");
  if (!emitter.is_object()) bad_doc("'emitter' must be an object");
  detail::reject_unknown_keys(emitter, "'emitter'", {"position", "f_c_hz", "tx_amplitude"});
  out.scene.emitter.position = as_vec3(require(emitter, "position", "'emitter'"), "emitter.position");
  if (emitter.contains("f_c_hz")) {
    out.scene.emitter.carrier_hz = as_number(emitter["f_c_hz"], "emitter.f_c_hz");
  }
  if (emitter.contains("tx_amplitude")) {
    const auto& amp = emitter["tx_amplitude"];
    if (amp.is_number()) {
      out.scene.emitter.amplitude = ComplexSignal(amp.get<double>(), 0.0);
    } else if (amp.is_array() && amp.size() == 2 && amp[0].is_number() && amp[1].is_number()) {
      out.scene.emitter.amplitude = ComplexSignal(amp[0].get<double>(), amp[1].get<double>());
    } else {
      bad_doc("emitter.tx_amplitude must be a number or an array of two numbers");
    }
  }

  if (doc.contains("users")) {
    const auto& users = doc["users"];
    if (!users.is_array()) bad_doc("'users' must be an array");
    for (size_t i = 0; i < users.size(); ++i) {
      std::string where = "users[" + std::to_string(i) + "]";
      const auto& u = users[i];
      if (!u.is_object()) bad_doc(where + " must be an object");
      detail::reject_unknown_keys(u, where, {"position", "occlusion_radius_m"});
      UserBody body;
      body.position = as_vec3(require(u, "position", where), where + ".position");
      if (u.contains("occlusion_radius_m")) {
        body.occlusion_radius = as_number(u["occlusion_radius_m"], where + ".occlusion_radius_m");
      }
      out.scene.users.push_back(body);
    }
  }

  if (doc.contains("channel")) {
    const auto& chan = doc["channel"];
    if (!chan.is_object()) bad_doc("'channel' must be an object");
    detail::reject_unknown_keys(chan, "'channel'",
                                {"sigma_w", "rho", "a_obs", "per_unit_mode", "units_per_side",
                                 "multipath_seed", "offline_noise_w", "averaging"});
    if (chan.contains("sigma_w")) {
      const auto& s = chan["sigma_w"];
      if (s.is_number()) {
        out.channel.sigma_w = s.get<double>();
      } else if (!(s.is_null() || (s.is_string() && s.get<std::string>() == "auto"))) {
        bad_doc("channel.sigma_w must be a number, null, or \"auto\"");
      }
    }
    if (chan.contains("rho")) out.channel.rho = as_number(chan["rho"], "channel.rho");
    if (chan.contains("a_obs")) out.channel.a_obs = as_number(chan["a_obs"], "channel.a_obs");
    if (chan.contains("per_unit_mode")) {
      out.channel.per_unit_mode = as_bool(chan["per_unit_mode"], "channel.per_unit_mode");
    }
    if (chan.contains("units_per_side")) {
      out.channel.units_per_side = as_int(chan["units_per_side"], "channel.units_per_side");
    }
    if (chan.contains("multipath_seed")) {
      const auto& s = chan["multipath_seed"];
      if (!s.is_number_unsigned()) bad_doc("channel.multipath_seed must be a nonnegative integer");
      out.channel.multipath_seed = s.get<std::uint64_t>();
    }
    if (chan.contains("offline_noise_w")) {
      out.channel.offline_noise_w = as_number(chan["offline_noise_w"], "channel.offline_noise_w");
    }
    if (chan.contains("averaging")) out.channel.averaging = as_int(chan["averaging"], "channel.averaging");
  }

  if (doc.contains("localizer")) {
    const auto& loc = doc["localizer"];
    if (!loc.is_object()) bad_doc("'localizer' must be an object");
    detail::reject_unknown_keys(loc, "'localizer'",
                                {"sigma", "alpha", "epsilon", "z_u", "beta1", "beta2"});
    if (loc.contains("sigma")) {
      const auto& s = loc["sigma"];
      if (s.is_number()) {
        out.localizer.sigma = s.get<double>();
      } else if (!(s.is_null() || (s.is_string() && s.get<std::string>() == "auto"))) {
        bad_doc("localizer.sigma must be a number, null, or \"auto\"");
      }
    }
    if (loc.contains("alpha")) out.localizer.alpha = as_number(loc["alpha"], "localizer.alpha");
    if (loc.contains("epsilon")) out.localizer.epsilon = as_number(loc["epsilon"], "localizer.epsilon");
    if (loc.contains("z_u")) out.localizer.z_u = as_int(loc["z_u"], "localizer.z_u");
    if (loc.contains("beta1")) out.localizer.beta1 = as_number(loc["beta1"], "localizer.beta1");
    if (loc.contains("beta2")) out.localizer.beta2 = as_int(loc["beta2"], "localizer.beta2");
  }

  validate_scene(out.scene);
  assign_user_blocks(out.scene);
  validate_channel_params(out.channel);
  validate_localizer_params(out.localizer);
  return out;
}

inline SceneDocument load_scene_document(const std::filesystem::path& path) {
  return parse_scene_document(detail::parse_json_file(path));
}

// Reflectivity table: a JSON array of {state, amplitude, phase_deg} with
// 1-based states covering 1..K exactly once. Magnitude bounds are checked by
// validate_reflectivity, not here, so a broken table can still be loaded and
// reported by the verification suites.
inline ReflectivityModel parse_reflectivity(const detail::Json& doc) {
  using detail::bad_doc;
  if (!doc.is_array() || doc.empty()) bad_doc("reflectivity document must be a nonempty array");
  ReflectivityModel model;
  model.table.assign(doc.size(), ComplexSignal{0.0, 0.0});
  std::vector<bool> seen(doc.size(), false);
  for (size_t i = 0; i < doc.size(); ++i) {
    std::string where = "reflectivity[" + std::to_string(i) + "]";
    const auto& e = doc[i];
    if (!e.is_object()) bad_doc(where + " must be an object");
    detail::reject_unknown_keys(e, where, {"state", "amplitude", "phase_deg"});
    int state = detail::as_int(detail::require(e, "state", where), where + ".state");
    if (state < 1 || state > static_cast<int>(doc.size())) {
      bad_doc(where + ".state must lie in 1.." + std::to_string(doc.size()));
    }
    if (seen[static_cast<size_t>(state - 1)]) bad_doc("duplicate reflectivity state " + std::to_string(state));
    seen[static_cast<size_t>(state - 1)] = true;
    double amp = detail::as_number(detail::require(e, "amplitude", where), where + ".amplitude");
    double phase = detail::as_number(detail::require(e, "phase_deg", where), where + ".phase_deg");
    model.table[static_cast<size_t>(state - 1)] = std::polar(amp, deg2rad(phase));
  }
  return model;
}

inline ReflectivityModel load_reflectivity(const std::filesystem::path& path) {
  return parse_reflectivity(detail::parse_json_file(path));
}

}  // namespace metaradar
