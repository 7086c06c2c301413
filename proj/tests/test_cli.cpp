// End-to-end checks of the command line tool: exit codes, output files, and
// byte-level reproducibility. Every case drives the real binary through
// std::system, so these tests also pin the shell-visible contract (usage
// errors exit 2, content errors exit 1).
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "metaradar/harness.hpp"

namespace fs = std::filesystem;
namespace mr = metaradar;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "mrcli_XXXXXX").string();
    REQUIRE(::mkdtemp(tmpl.data()) != nullptr);
    path = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

int run_cli(const std::string& args, const fs::path& log) {
  std::string cmd = std::string(METARADAR_CLI_PATH) + " " + args + " > " +
                    log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

// A 150-block deployment small enough that offline builds finish in
// milliseconds. Mirrors the built-in geometry otherwise: 4x4 surface at the
// origin, emitter half a meter out at 60 degrees elevation.
const char* kDemoScene = R"json({
  "grid": {"origin": [0.45, -0.25, -0.25], "edge_m": 0.1, "dims": [6, 5, 5]},
  "surface": {"center": [0, 0, 0], "normal": [1, 0, 0],
              "rows": 4, "cols": 4, "pitch_m": 0.1725},
  "emitter": {"position": [0.5, 0.0, 0.8660254037844386],
              "f_c_hz": 3.2e9, "tx_amplitude": 1.0},
  "users": [{"position": [0.75, 0.05, -0.05]}],
  "channel": {"sigma_w": 1e-6, "rho": 0.0, "offline_noise_w": 0.0,
              "averaging": 1}
})json";

fs::path write_demo_scene(const TempDir& dir) {
  fs::path p = dir.path / "demo.json";
  spit(p, kDemoScene);
  return p;
}

}  // namespace

TEST_CASE("cli rejects bad invocations before doing any work") {
  TempDir dir;
  fs::path log = dir.path / "log.txt";

  SECTION("no subcommand") { CHECK(run_cli("", log) == 2); }
  SECTION("unknown subcommand") { CHECK(run_cli("frobnicate", log) == 2); }
  SECTION("help exits zero") {
    CHECK(run_cli("--help", log) == 0);
    CHECK(slurp(log).find("localize") != std::string::npos);
  }
  SECTION("missing scene file is a content error") {
    CHECK(run_cli("verify --scene " + (dir.path / "nope.json").string(), log) == 1);
  }
}

TEST_CASE("cli verify passes on the built-in deployment") {
  TempDir dir;
  fs::path log = dir.path / "log.txt";
  REQUIRE(run_cli("verify", log) == 0);
  std::string out = slurp(log);
  CHECK(out.find("[PASS]") != std::string::npos);
  CHECK(out.find("[FAIL]") == std::string::npos);
  CHECK(out.find("all suites passed") != std::string::npos);
}

TEST_CASE("cli verify flags an out-of-range reflectivity table") {
  TempDir dir;
  fs::path log = dir.path / "log.txt";
  fs::path table = dir.path / "bad_table.json";
  spit(table, R"json([
    {"state": 1, "amplitude": 1.2, "phase_deg": 0},
    {"state": 2, "amplitude": 1.0, "phase_deg": 90},
    {"state": 3, "amplitude": 1.0, "phase_deg": 180},
    {"state": 4, "amplitude": 1.0, "phase_deg": 270}
  ])json");
  REQUIRE(run_cli("verify --reflectivity " + table.string(), log) == 1);
  CHECK(slurp(log).find("[FAIL]") != std::string::npos);
}

TEST_CASE("cli radiomap renders plane slices and reuses saved measurements") {
  TempDir dir;
  fs::path log = dir.path / "log.txt";
  fs::path scene = write_demo_scene(dir);
  fs::path cm = dir.path / "demo.mrcm";
  fs::path out1 = dir.path / "r1";
  fs::path out2 = dir.path / "r2";

  REQUIRE(run_cli("radiomap --scene " + scene.string() + " --plane-x 0.75 --seed 3" +
                      " --save-cm " + cm.string() + " --out " + out1.string(),
                  log) == 0);

  fs::path csv = out1 / "map_c0_x0.75.csv";
  fs::path pgm = out1 / "map_c0_x0.75.pgm";
  REQUIRE(fs::exists(csv));
  REQUIRE(fs::exists(pgm));

  std::string csv_text = slurp(csv);
  CHECK(csv_text.rfind("y_m,z_m,rss_w\n", 0) == 0);
  // header plus one row per block in the 5x5 slice
  CHECK(std::count(csv_text.begin(), csv_text.end(), '\n') == 26);

  std::string pgm_text = slurp(pgm);
  std::string pgm_header = "P5\n5 5\n255\n";
  REQUIRE(pgm_text.rfind(pgm_header, 0) == 0);
  CHECK(pgm_text.size() == pgm_header.size() + 25);

  // the saved measurement file must reproduce the slice bit for bit
  REQUIRE(run_cli("radiomap --scene " + scene.string() + " --plane-x 0.75" +
                      " --cm " + cm.string() + " --out " + out2.string(),
                  log) == 0);
  CHECK(slurp(out2 / "map_c0_x0.75.csv") == csv_text);

  SECTION("a measurement file from another deployment is rejected") {
    // no --scene selects the built-in 1 m deployment: 1000 blocks, not 150
    CHECK(run_cli("radiomap --cm " + cm.string() + " --out " + out2.string(), log) == 1);
  }
}

TEST_CASE("cli radiomap validates configurations and plane coordinates") {
  TempDir dir;
  fs::path log = dir.path / "log.txt";
  fs::path scene = write_demo_scene(dir);
  std::string base = "radiomap --scene " + scene.string() + " --out " +
                     (dir.path / "out").string();

  SECTION("config of the wrong length") {
    CHECK(run_cli(base + " --config 22", log) == 2);
  }
  SECTION("config with an out-of-range state digit") {
    CHECK(run_cli(base + " --config 9999999999999999", log) == 2);
  }
  SECTION("plane outside the grid") {
    CHECK(run_cli(base + " --plane-x 2.0", log) == 2);
    CHECK(slurp(log).find("does not intersect") != std::string::npos);
  }
}

TEST_CASE("cli localize validates its inputs") {
  TempDir dir;
  fs::path log = dir.path / "log.txt";
  fs::path scene = write_demo_scene(dir);
  std::string base = "localize --scene " + scene.string();

  SECTION("seed is mandatory") {
    CHECK(run_cli(base + " --build-offline", log) == 2);
  }
  SECTION("a measurement source is mandatory") {
    CHECK(run_cli(base + " --seed 1", log) == 2);
    CHECK(slurp(log).find("--build-offline") != std::string::npos);
  }
  SECTION("cm and build-offline are mutually exclusive") {
    fs::path cm = dir.path / "x.mrcm";
    spit(cm, "not really a measurement file");
    CHECK(run_cli(base + " --seed 1 --cm " + cm.string() + " --build-offline", log) == 2);
  }
  SECTION("negative sigma") {
    CHECK(run_cli(base + " --seed 1 --build-offline --sigma -1", log) == 2);
  }
  SECTION("unknown scheme") {
    CHECK(run_cli(base + " --seed 1 --build-offline --scheme warp", log) == 2);
  }
  SECTION("zero cycle budget") {
    CHECK(run_cli(base + " --seed 1 --build-offline --cycles 0", log) == 2);
  }
}

TEST_CASE("cli localize runs a reproducible trial") {
  TempDir dir;
  fs::path log = dir.path / "log.txt";
  fs::path scene = write_demo_scene(dir);
  fs::path cm = dir.path / "demo.mrcm";
  fs::path out1 = dir.path / "t1";
  fs::path out2 = dir.path / "t2";
  fs::path out3 = dir.path / "t3";

  std::string base = "localize --scene " + scene.string() +
                     " --seed 11 --cycles 4 --sigma 0";
  REQUIRE(run_cli(base + " --build-offline --save-cm " + cm.string() +
                      " --out " + out1.string(),
                  log) == 0);

  fs::path csv = out1 / "trial.csv";
  REQUIRE(fs::exists(csv));
  std::string text = slurp(csv);
  std::vector<mr::TrialCsvRow> rows = mr::parse_trial_csv(text);
  REQUIRE(!rows.empty());

  // cycle 0 probes the all-base configuration before any adaptation
  CHECK(rows.front().cycle == 0);
  CHECK(rows.front().config == std::string(16, '0'));
  CHECK(rows.back().cycle <= 4);
  for (const mr::TrialCsvRow& r : rows) {
    CHECK(r.user == 0);
    CHECK(r.error_m >= 0.0);
  }

  // identical invocation, identical bytes
  REQUIRE(run_cli(base + " --build-offline --out " + out2.string(), log) == 0);
  CHECK(slurp(out2 / "trial.csv") == text);

  // loading the saved measurements instead of rebuilding changes nothing
  REQUIRE(run_cli(base + " --cm " + cm.string() + " --out " + out3.string(), log) == 0);
  CHECK(slurp(out3 / "trial.csv") == text);
}

TEST_CASE("cli sweep aggregates arms into a summary table") {
  TempDir dir;
  fs::path log = dir.path / "log.txt";
  fs::path scene = write_demo_scene(dir);
  fs::path out1 = dir.path / "s1";

  std::string base = "sweep --scene " + scene.string() +
                     " --axis users --values 1,2 --reps 2 --cycles 2 --seed 7";
  REQUIRE(run_cli(base + " --out " + out1.string(), log) == 0);

  std::string text = slurp(out1 / "summary.csv");
  std::vector<mr::SummaryCsvRow> rows = mr::parse_summary_csv(text);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].users == 1);
  CHECK(rows[1].users == 2);
  for (const mr::SummaryCsvRow& r : rows) {
    CHECK(r.scheme == "optimized");
    CHECK(r.cycles == 2);
    CHECK(r.mean_error_m >= 0.0);
    CHECK(std::isfinite(r.mean_error_m));
  }

  SECTION("worker count does not affect the output bytes") {
    const char* saved = std::getenv("METARADAR_THREADS");
    std::string saved_copy = saved ? saved : "";

    fs::path out_a = dir.path / "sa";
    fs::path out_b = dir.path / "sb";
    ::setenv("METARADAR_THREADS", "1", 1);
    REQUIRE(run_cli(base + " --out " + out_a.string(), log) == 0);
    ::setenv("METARADAR_THREADS", "2", 1);
    REQUIRE(run_cli(base + " --out " + out_b.string(), log) == 0);
    if (saved)
      ::setenv("METARADAR_THREADS", saved_copy.c_str(), 1);
    else
      ::unsetenv("METARADAR_THREADS");

    CHECK(slurp(out_a / "summary.csv") == slurp(out_b / "summary.csv"));
  }
}

TEST_CASE("cli sweep validates its axis") {
  TempDir dir;
  fs::path log = dir.path / "log.txt";

  SECTION("unknown axis name") {
    CHECK(run_cli("sweep --axis banana --values 1 --seed 1", log) == 2);
  }
  SECTION("values are mandatory") {
    CHECK(run_cli("sweep --axis users --seed 1", log) == 2);
  }
  SECTION("unparsable axis value") {
    CHECK(run_cli("sweep --axis users --values one --seed 1", log) == 2);
  }
  SECTION("unknown scheme on the scheme axis") {
    CHECK(run_cli("sweep --axis scheme --values warp --seed 1", log) == 2);
  }
}
