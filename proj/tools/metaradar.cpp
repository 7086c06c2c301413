// Command-line front end: scene ingestion, invariant verification, radio-map
// rendering, single localization trials, and Monte-Carlo sweeps.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metaradar/metaradar.hpp"

namespace mr = metaradar;
namespace fs = std::filesystem;

namespace {

// Invocation problems exit with 2; file-content and verification problems
// with 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

mr::SceneDocument load_or_default(const std::string& scene_path) {
  if (scene_path.empty()) {
    mr::SceneDocument doc;
    doc.scene = mr::default_scene(1.0);
    return doc;
  }
  return mr::load_scene_document(scene_path);
}

mr::ReflectivityModel load_reflectivity_or_default(const std::string& path) {
  if (path.empty()) return mr::default_reflectivity();
  return mr::load_reflectivity(path);
}

mr::CriticalMeasurements obtain_measurements(const mr::SceneDocument& doc,
                                             const mr::ChannelModel& chan,
                                             const std::string& cm_path, bool build_offline,
                                             const std::string& save_path, std::uint64_t seed) {
  mr::CriticalMeasurements cm;
  if (!cm_path.empty() && build_offline) {
    throw UsageError("pass either --cm or --build-offline, not both");
  }
  if (!cm_path.empty()) {
    cm = mr::read_critical_measurements(cm_path);
    if (cm.blocks != mr::block_count(doc.scene.grid)) {
      throw std::runtime_error("measurement file covers " + std::to_string(cm.blocks) +
                               " blocks but the scene has " +
                               std::to_string(mr::block_count(doc.scene.grid)));
    }
    if (cm.scene_hash != mr::scene_hash32(doc.scene, chan.params)) {
      throw std::runtime_error("measurement file " + cm_path +
                               " was built for a different scene or channel");
    }
  } else if (build_offline) {
    cm = mr::run_offline_phase(doc.scene, chan, seed);
  } else {
    throw UsageError("no offline measurements: pass --cm <file> or --build-offline");
  }
  if (!save_path.empty()) mr::write_critical_measurements(save_path, cm);
  return cm;
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  for (char c : text) {
    if (c == ',') {
      out.push_back(item);
      item.clear();
    } else {
      item.push_back(c);
    }
  }
  out.push_back(item);
  for (std::string& s : out) {
    if (s.empty()) throw UsageError("empty entry in --values");
  }
  return out;
}

mr::Vec3 grid_center(const mr::BlockGrid& g) {
  mr::Vec3 lo = mr::grid_min(g), hi = mr::grid_max(g);
  return {0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), 0.5 * (lo.z + hi.z)};
}

int cmd_verify(const std::string& scene_path, const std::string& reflect_path) {
  mr::SceneDocument doc = load_or_default(scene_path);
  mr::ReflectivityModel reflect = load_reflectivity_or_default(reflect_path);
  std::vector<mr::VerifyResult> results = mr::run_verification(doc.scene, doc.channel, reflect);
  int failures = 0;
  for (const mr::VerifyResult& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
    if (!r.detail.empty()) std::cout << ": " << r.detail;
    std::cout << "\n";
    if (!r.pass) ++failures;
  }
  std::cout << (failures == 0 ? "all suites passed\n"
                              : std::to_string(failures) + " suite(s) failed\n");
  return failures == 0 ? 0 : 1;
}

void write_plane_files(const fs::path& out_dir, const std::string& stem, const mr::BlockGrid& grid,
                       int plane_i, const std::vector<double>& rss) {
  // CSV: one row per block of the plane, y outer, z inner.
  std::string csv = "y_m,z_m,rss_w\n";
  for (int j = 0; j < grid.ny; ++j) {
    for (int k = 0; k < grid.nz; ++k) {
      mr::Vec3 c = mr::block_center(grid, mr::block_index(grid, plane_i, j, k));
      csv += mr::format_double(c.y);
      csv += ',';
      csv += mr::format_double(c.z);
      csv += ',';
      csv += mr::format_double(rss[static_cast<size_t>(j) * grid.nz + k]);
      csv += '\n';
    }
  }
  mr::write_text_file(out_dir / (stem + ".csv"), csv);

  // PGM: min-max normalized, +y to the right, +z upward.
  double lo = rss[0], hi = rss[0];
  for (double v : rss) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::string pgm = "P5\n" + std::to_string(grid.ny) + " " + std::to_string(grid.nz) + "\n255\n";
  for (int k = grid.nz - 1; k >= 0; --k) {
    for (int j = 0; j < grid.ny; ++j) {
      double v = rss[static_cast<size_t>(j) * grid.nz + k];
      int px = hi > lo ? static_cast<int>(std::lround(255.0 * (v - lo) / (hi - lo))) : 0;
      pgm.push_back(static_cast<char>(px));
    }
  }
  mr::write_text_file(out_dir / (stem + ".pgm"), pgm);
}

int cmd_radiomap(const std::string& scene_path, const std::string& reflect_path,
                 std::vector<std::string> configs, std::vector<double> planes,
                 const std::string& cm_path, const std::string& save_cm, const std::string& out,
                 std::uint64_t seed) {
  mr::SceneDocument doc = load_or_default(scene_path);
  mr::ChannelModel chan = mr::make_channel(doc.channel, load_reflectivity_or_default(reflect_path));
  const mr::BlockGrid& grid = doc.scene.grid;
  mr::CriticalMeasurements cm =
      obtain_measurements(doc, chan, cm_path, cm_path.empty(), save_cm, seed);

  int elements = mr::element_count(doc.scene.surface);
  int states = static_cast<int>(chan.reflect.table.size());
  std::vector<mr::Configuration> parsed;
  if (configs.empty()) {
    parsed.push_back(mr::all_base_configuration(elements));
  } else {
    for (const std::string& text : configs) {
      try {
        parsed.push_back(mr::config_from_string(text, elements, states));
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("bad --config value: ") + e.what());
      }
    }
  }
  if (planes.empty()) planes.push_back(grid_center(grid).x);

  fs::create_directories(out);
  for (size_t ci = 0; ci < parsed.size(); ++ci) {
    for (double x : planes) {
      if (x < mr::grid_min(grid).x || x > mr::grid_max(grid).x) {
        throw UsageError("plane x=" + format_g(x) + " does not intersect the block grid");
      }
      int i = mr::detail::grid_axis_index(x, grid.origin.x, grid.edge, grid.nx, "x");
      std::vector<double> rss(static_cast<size_t>(grid.ny) * grid.nz);
      for (int j = 0; j < grid.ny; ++j) {
        for (int k = 0; k < grid.nz; ++k) {
          rss[static_cast<size_t>(j) * grid.nz + k] =
              mr::predict_rss(cm, parsed[ci], mr::block_index(grid, i, j, k));
        }
      }
      std::string stem = "map_c" + std::to_string(ci) + "_x" + format_g(x);
      write_plane_files(out, stem, grid, i, rss);
      std::cout << "wrote " << stem << ".csv and " << stem << ".pgm (" << grid.ny << "x" << grid.nz
                << " blocks)\n";
    }
  }
  return 0;
}

int cmd_localize(const std::string& scene_path, const std::string& reflect_path,
                 const std::string& cm_path, bool build_offline, const std::string& save_cm,
                 const std::string& out, std::uint64_t seed, const std::string& scheme,
                 int cycles, double sigma, bool sigma_set, int users, bool obstruction,
                 double lateral) {
  mr::SceneDocument doc = load_or_default(scene_path);
  if (sigma_set) {
    if (sigma < 0.0) throw UsageError("--sigma must be nonnegative");
    doc.channel.sigma_w = sigma;
  }
  mr::ChannelModel chan = mr::make_channel(doc.channel, load_reflectivity_or_default(reflect_path));
  mr::CriticalMeasurements cm =
      obtain_measurements(doc, chan, cm_path, build_offline, save_cm, seed);
  if (cycles < 1) throw UsageError("--cycles must be at least 1");

  mr::TrialConfig trial;
  trial.seed = seed;
  try {
    trial.scheme = mr::parse_scheme(scheme);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  trial.max_cycles = cycles + 1;  // the initial cycle plus the online budget
  trial.termination = mr::TerminationParams{doc.localizer.beta1, doc.localizer.beta2};
  if (obstruction) {
    mr::TrialConfig layout = mr::obstruction_scenario(grid_center(doc.scene.grid).x, lateral);
    trial.users = layout.users;
    trial.obstruction = true;
    trial.allow_outside = true;
  } else if (!doc.scene.users.empty()) {
    trial.users = doc.scene.users;
  } else {
    trial.users = mr::default_user_positions(doc.scene.grid, users);
  }

  mr::TrialRecord rec = mr::run_localization(doc.scene, chan, cm, trial, doc.localizer);

  fs::create_directories(out);
  fs::path csv_path = fs::path(out) / "trial.csv";
  mr::write_text_file(csv_path, mr::trial_csv(rec));

  const mr::CycleLog& last = rec.cycles.back();
  std::cout << "scheme " << mr::scheme_name(trial.scheme) << " seed " << seed << " cycles "
            << rec.cycles.size() << "\n";
  for (int i = 0; i < rec.users; ++i) {
    mr::Vec3 c = mr::block_center(doc.scene.grid, last.estimates[static_cast<size_t>(i)]);
    std::cout << "user " << i << ": block " << last.estimates[static_cast<size_t>(i)] << " center ("
              << format_g(c.x) << ", " << format_g(c.y) << ", " << format_g(c.z) << ") error "
              << format_g(last.errors[static_cast<size_t>(i)]) << " m\n";
  }
  std::cout << "final loss " << format_g(last.loss_lu) << " at cycle " << last.cycle
            << " (simulated " << format_g(100.0 * last.cycle) << " ms), wrote "
            << csv_path.string() << "\n";
  return 0;
}

int cmd_sweep(const std::string& scene_path, const std::string& reflect_path,
              const std::string& axis, const std::string& values_text, int reps, int cycles,
              const std::string& scheme, int users, const std::string& out, std::uint64_t seed) {
  if (reps < 1) throw UsageError("--reps must be at least 1");
  if (cycles < 1) throw UsageError("--cycles must be at least 1");
  mr::SceneDocument doc = load_or_default(scene_path);
  mr::ReflectivityModel reflect = load_reflectivity_or_default(reflect_path);
  std::vector<std::string> values = split_values(values_text);

  auto base_trial = [&](const mr::SceneDocument& d) {
    mr::TrialConfig t;
    t.seed = seed;
    t.scheme = mr::parse_scheme(scheme);
    t.max_cycles = cycles + 1;
    t.termination = mr::TerminationParams{d.localizer.beta1, d.localizer.beta2};
    return t;
  };
  auto make_arm = [&](const std::string& label, const mr::SceneDocument& d,
                      const mr::TrialConfig& t) {
    mr::MonteCarloArm arm;
    arm.label = label;
    arm.scene = d.scene;
    arm.chan = mr::make_channel(d.channel, reflect);
    arm.cm = mr::run_offline_phase(arm.scene, arm.chan, seed);
    arm.trial = t;
    arm.loc = d.localizer;
    arm.d_m = mr::distance(d.scene.surface.center, grid_center(d.scene.grid));
    return arm;
  };

  std::vector<mr::MonteCarloArm> arms;
  if (axis == "distance") {
    for (const std::string& v : values) {
      double d = 0.0;
      try {
        d = std::stod(v);
      } catch (const std::exception&) {
        throw UsageError("bad distance value '" + v + "'");
      }
      mr::SceneDocument scoped = doc;
      scoped.scene = mr::default_scene(d);
      mr::TrialConfig t = base_trial(scoped);
      t.users = mr::default_user_positions(scoped.scene.grid, users);
      arms.push_back(make_arm("d=" + v, scoped, t));
    }
  } else if (axis == "users") {
    for (const std::string& v : values) {
      int count = 0;
      try {
        count = std::stoi(v);
      } catch (const std::exception&) {
        throw UsageError("bad user count '" + v + "'");
      }
      mr::TrialConfig t = base_trial(doc);
      t.users = mr::default_user_positions(doc.scene.grid, count);
      arms.push_back(make_arm("users=" + v, doc, t));
    }
  } else if (axis == "scheme") {
    for (const std::string& v : values) {
      mr::TrialConfig t = base_trial(doc);
      try {
        t.scheme = mr::parse_scheme(v);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      t.users = doc.scene.users.empty() ? mr::default_user_positions(doc.scene.grid, users)
                                        : doc.scene.users;
      arms.push_back(make_arm("scheme=" + v, doc, t));
    }
  } else {
    throw UsageError("--axis must be one of distance, users, scheme");
  }

  mr::SummaryStats stats = mr::run_monte_carlo(arms, reps);
  fs::create_directories(out);
  fs::path summary_path = fs::path(out) / "summary.csv";
  mr::write_text_file(summary_path, mr::summary_csv(stats));
  for (const mr::ArmSummary& arm : stats.arms) {
    std::cout << arm.label << ": mean " << format_g(arm.mean_error) << " m, median "
              << format_g(arm.median_error) << " m, p90 " << format_g(arm.p90_error) << " m\n";
  }
  std::cout << "wrote " << summary_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metasurface-assisted RSS localization toolkit"};
  app.require_subcommand(1);

  std::string scene_path, reflect_path, cm_path, save_cm, out = ".";
  std::uint64_t seed = 0;

  CLI::App* verify = app.add_subcommand("verify", "run the invariant suites");
  verify->add_option("--scene", scene_path, "scene JSON path (default: built-in 1 m scene)");
  verify->add_option("--reflectivity", reflect_path, "reflectivity table JSON");

  CLI::App* radiomap = app.add_subcommand("radiomap", "render RSS planes as CSV and PGM");
  std::vector<std::string> configs;
  std::vector<double> planes;
  radiomap->add_option("--scene", scene_path, "scene JSON path");
  radiomap->add_option("--reflectivity", reflect_path, "reflectivity table JSON");
  radiomap->add_option("--config", configs, "element states as one digit per element");
  radiomap->add_option("--plane-x", planes, "x coordinate of a rendered plane, meters");
  radiomap->add_option("--cm", cm_path, "load offline measurements from this file");
  radiomap->add_option("--save-cm", save_cm, "store offline measurements to this file");
  radiomap->add_option("--out", out, "output directory");
  radiomap->add_option("--seed", seed, "offline measurement seed");

  CLI::App* localize = app.add_subcommand("localize", "run one localization trial");
  std::string scheme = "optimized";
  int cycles = 500, users = 1;
  double sigma = 0.0, lateral = 0.0;
  bool build_offline = false, obstruction = false;
  localize->add_option("--scene", scene_path, "scene JSON path");
  localize->add_option("--reflectivity", reflect_path, "reflectivity table JSON");
  localize->add_option("--cm", cm_path, "load offline measurements from this file");
  localize->add_flag("--build-offline", build_offline, "run the offline phase in-process");
  localize->add_option("--save-cm", save_cm, "store offline measurements to this file");
  localize->add_option("--out", out, "output directory");
  localize->add_option("--seed", seed, "trial seed")->required();
  localize->add_option("--scheme", scheme, "fixed, random, or optimized");
  localize->add_option("--cycles", cycles, "online cycle budget");
  CLI::Option* sigma_opt = localize->add_option("--sigma", sigma, "channel noise std, watts");
  localize->add_option("--users", users, "user count when the scene defines none");
  localize->add_flag("--obstruction", obstruction, "two-user shadowing layout");
  localize->add_option("--lateral", lateral, "lateral offset of the near user, meters");

  CLI::App* sweep = app.add_subcommand("sweep", "Monte-Carlo sweep over one axis");
  std::string axis, values_text;
  int reps = 5;
  int sweep_cycles = 100;
  sweep->add_option("--scene", scene_path, "scene template JSON path");
  sweep->add_option("--reflectivity", reflect_path, "reflectivity table JSON");
  sweep->add_option("--axis", axis, "distance, users, or scheme")->required();
  sweep->add_option("--values", values_text, "comma-separated axis values")->required();
  sweep->add_option("--reps", reps, "repetitions per axis value");
  sweep->add_option("--cycles", sweep_cycles, "online cycle budget per trial");
  sweep->add_option("--scheme", scheme, "scheme for non-scheme axes");
  sweep->add_option("--users", users, "user count for the distance and scheme axes");
  sweep->add_option("--out", out, "output directory");
  sweep->add_option("--seed", seed, "base seed")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(verify)) return cmd_verify(scene_path, reflect_path);
    if (app.got_subcommand(radiomap)) {
      return cmd_radiomap(scene_path, reflect_path, configs, planes, cm_path, save_cm, out, seed);
    }
    if (app.got_subcommand(localize)) {
      return cmd_localize(scene_path, reflect_path, cm_path, build_offline, save_cm, out, seed,
                          scheme, cycles, sigma, sigma_opt->count() > 0, users, obstruction,
                          lateral);
    }
    if (app.got_subcommand(sweep)) {
      return cmd_sweep(scene_path, reflect_path, axis, values_text, reps, sweep_cycles, scheme,
                       users, out, seed);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
