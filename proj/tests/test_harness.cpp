#include "metaradar/harness.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace metaradar;
using Catch::Approx;

namespace {

// Restores METARADAR_THREADS on scope exit so tests cannot leak settings.
struct ThreadsEnvGuard {
  std::string saved;
  bool had = false;
  ThreadsEnvGuard() {
    const char* v = std::getenv("METARADAR_THREADS");
    if (v) {
      had = true;
      saved = v;
    }
  }
  ~ThreadsEnvGuard() {
    if (had) {
      ::setenv("METARADAR_THREADS", saved.c_str(), 1);
    } else {
      ::unsetenv("METARADAR_THREADS");
    }
  }
};

// Small deployment: 27 blocks in front of a 1x2 surface. Trials finish in
// milliseconds, which keeps the behavioural tests cheap.
Scene small_scene() {
  Scene sc;
  sc.grid.origin = {0.8, -0.075, -0.075};
  sc.grid.edge = 0.05;
  sc.grid.nx = sc.grid.ny = sc.grid.nz = 3;
  sc.surface.center = {0.0, 0.0, 0.0};
  sc.surface.rows = 1;
  sc.surface.cols = 2;
  sc.emitter.position = {0.5, 0.0, 0.8};
  validate_scene(sc);
  return sc;
}

UserBody user_at_block(const Scene& sc, int n) {
  return UserBody{block_center(sc.grid, n), n, 0.15};
}

}  // namespace

TEST_CASE("worker count comes from the environment when set", "[harness]") {
  ThreadsEnvGuard guard;

  ::unsetenv("METARADAR_THREADS");
  CHECK(worker_count() >= 1);

  ::setenv("METARADAR_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  ::setenv("METARADAR_THREADS", "1", 1);
  CHECK(worker_count() == 1);

  for (const char* bad : {"0", "-2", "x", "4097", "3.5"}) {
    ::setenv("METARADAR_THREADS", bad, 1);
    CHECK_THROWS_AS(worker_count(), std::invalid_argument);
  }
}

TEST_CASE("parallel_for covers every index exactly once", "[harness]") {
  for (int workers : {1, 2, 7}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(100, workers, [&](int i) { hits[static_cast<size_t>(i)].fetch_add(1); });
    for (const auto& h : hits) REQUIRE(h.load() == 1);
  }
  // degenerate sizes
  parallel_for(0, 4, [&](int) { FAIL("no work expected"); });
  std::vector<std::atomic<int>> one(1);
  parallel_for(1, 8, [&](int i) { one[static_cast<size_t>(i)].fetch_add(1); });
  CHECK(one[0].load() == 1);
}

TEST_CASE("parallel_for propagates worker exceptions", "[harness]") {
  auto boom = [](int i) {
    if (i == 7) throw std::runtime_error("boom");
  };
  CHECK_THROWS_WITH(parallel_for(32, 4, boom), "boom");
  CHECK_THROWS_WITH(parallel_for(32, 1, boom), "boom");
}

TEST_CASE("noiseless offline measurements are exact", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 11);

  REQUIRE(cm.elements == 2);
  REQUIRE(cm.blocks == 27);
  REQUIRE(cm.states == 4);
  CHECK(cm.averaging == 16);
  CHECK(cm.scene_hash == scene_hash32(sc, chan.params));

  Configuration base = all_base_configuration(2);
  auto ids = critical_configurations(2, 4);
  for (int n = 0; n < 27; ++n) {
    CHECK(cm.base[static_cast<size_t>(n)] == received_signal(sc, chan, base, n));
    for (size_t q = 1; q < ids.size(); ++q) {
      ComplexSignal direct = received_signal(sc, chan, ids[q].config, n) -
                             received_signal(sc, chan, base, n);
      REQUIRE(cm.delta(ids[q].element, ids[q].state, n) == direct);
    }
  }

  // seed is irrelevant without offline noise
  CHECK(run_offline_phase(sc, chan, 999).base == cm.base);
}

TEST_CASE("offline measurement streams are per block and reproducible", "[harness]") {
  Scene sc = small_scene();
  ChannelParams params;
  params.offline_noise_w = 1e-6;
  ChannelModel chan = make_channel(params);

  CriticalMeasurements a = run_offline_phase(sc, chan, 21);
  CriticalMeasurements b = run_offline_phase(sc, chan, 21);
  CHECK(a.base == b.base);
  CHECK(a.deltas == b.deltas);

  CriticalMeasurements c = run_offline_phase(sc, chan, 22);
  CHECK(a.base != c.base);

  // replay the documented stream for one block: sixteen averaged samples of
  // the base configuration come first
  int n = 13;
  Engine eng(substream(21, detail::kOfflineTag, static_cast<std::uint64_t>(n)));
  ComplexSignal y = received_signal(sc, chan, all_base_configuration(2), n);
  ComplexSignal acc{0.0, 0.0};
  for (int s = 0; s < 16; ++s) {
    acc += y + ComplexSignal(1e-6 * gaussian(eng), 1e-6 * gaussian(eng));
  }
  CHECK(a.base[static_cast<size_t>(n)] == acc / 16.0);
}

TEST_CASE("offline noise shrinks with averaging and grows with amplitude", "[harness]") {
  Scene sc = small_scene();
  Configuration base = all_base_configuration(2);
  ChannelModel clean = make_channel(ChannelParams{});
  CriticalMeasurements truth = run_offline_phase(sc, clean, 5);

  auto deviation = [&](double pert, int avg) {
    ChannelParams params;
    params.offline_noise_w = pert;
    params.averaging = avg;
    CriticalMeasurements cm = run_offline_phase(sc, make_channel(params), 5);
    double acc = 0.0;
    for (int n = 0; n < cm.blocks; ++n) {
      acc += std::norm(cm.base[static_cast<size_t>(n)] - truth.base[static_cast<size_t>(n)]);
    }
    return std::sqrt(acc / cm.blocks);
  };

  double base_dev = deviation(1e-6, 16);
  CHECK(base_dev > 0.0);

  // quadrupling the perturbation roughly quadruples the deviation
  double strong = deviation(4e-6, 16);
  CHECK(strong / base_dev > 3.2);
  CHECK(strong / base_dev < 4.8);

  // sixteen-fold averaging gain is a factor of four over single samples
  double single = deviation(1e-6, 1);
  CHECK(single / base_dev > 2.6);
  CHECK(single / base_dev < 6.0);
}

TEST_CASE("noise-free trials localize exactly and deterministically", "[harness]") {
  Scene sc = small_scene();
  ChannelParams params;
  params.sigma_w = 0.0;  // exact RSS observations
  ChannelModel chan = make_channel(params);
  CriticalMeasurements cm = run_offline_phase(sc, chan, 1);

  TrialConfig trial;
  trial.seed = 42;
  trial.scheme = Scheme::Optimized;
  trial.users = {user_at_block(sc, 13)};
  trial.max_cycles = 20;

  TrialRecord rec = run_localization(sc, chan, cm, trial);
  REQUIRE(!rec.cycles.empty());
  CHECK(rec.final_estimates == std::vector<int>{13});
  CHECK(rec.cycles.back().errors[0] == 0.0);

  TrialRecord again = run_localization(sc, chan, cm, trial);
  CHECK(trial_csv(rec) == trial_csv(again));
}

TEST_CASE("fixed scheme never leaves the base configuration", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  TrialConfig trial;
  trial.seed = 7;
  trial.scheme = Scheme::Fixed;
  trial.users = {user_at_block(sc, 4)};
  trial.max_cycles = 12;
  trial.termination.beta1 = 0.0;  // run the full budget

  TrialRecord rec = run_localization(sc, chan, cm, trial);
  REQUIRE(rec.cycles.size() == 12);
  Configuration base = all_base_configuration(2);
  for (const CycleLog& log : rec.cycles) REQUIRE(log.config == base);
}

TEST_CASE("random scheme replays the documented per-cycle draws", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  TrialConfig trial;
  trial.seed = 31;
  trial.scheme = Scheme::Random;
  trial.users = {user_at_block(sc, 4)};
  trial.max_cycles = 6;
  trial.termination.beta1 = 0.0;

  TrialRecord rec = run_localization(sc, chan, cm, trial);
  REQUIRE(rec.cycles.size() == 6);
  CHECK(rec.cycles[0].config == all_base_configuration(2));  // probe cycle
  for (int k = 1; k < 6; ++k) {
    Engine eng(substream(31, detail::kConfigTag, static_cast<std::uint64_t>(k)));
    REQUIRE(rec.cycles[static_cast<size_t>(k)].config == random_configuration(2, 4, eng));
  }
}

TEST_CASE("cycle budget and termination rule cap the record", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  TrialConfig trial;
  trial.seed = 3;
  trial.scheme = Scheme::Fixed;
  trial.users = {user_at_block(sc, 0)};

  SECTION("loss threshold zero leaves only the hard caps") {
    trial.termination.beta1 = 0.0;
    trial.termination.beta2 = 7;
    trial.max_cycles = 100;
    TrialRecord rec = run_localization(sc, chan, cm, trial);
    CHECK(rec.cycles.size() == 8);  // cycles 0..7; cycle count 8 exceeds beta2
    CHECK(rec.cycles.back().cycle == 7);
  }
  SECTION("max_cycles wins when smaller") {
    trial.termination.beta1 = 0.0;
    trial.max_cycles = 5;
    TrialRecord rec = run_localization(sc, chan, cm, trial);
    CHECK(rec.cycles.size() == 5);
  }
  SECTION("default budget never exceeds 501 rows") {
    trial.termination.beta1 = 0.0;
    TrialRecord rec = run_localization(sc, chan, cm, trial);
    CHECK(rec.cycles.size() == 501);
  }
}

TEST_CASE("a user's noise stream ignores how many receivers share the trial", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  TrialConfig solo;
  solo.seed = 19;
  solo.scheme = Scheme::Fixed;  // identical configs keep the mean RSS comparable
  solo.users = {user_at_block(sc, 4)};
  solo.max_cycles = 8;
  solo.termination.beta1 = 0.0;

  TrialConfig pair = solo;
  pair.users.push_back(user_at_block(sc, 22));

  TrialRecord a = run_localization(sc, chan, cm, solo);
  TrialRecord b = run_localization(sc, chan, cm, pair);
  REQUIRE(a.cycles.size() == b.cycles.size());
  for (size_t k = 0; k < a.cycles.size(); ++k) {
    REQUIRE(a.cycles[k].rss[0] == b.cycles[k].rss[0]);
  }
}

TEST_CASE("simulator truth fields stay out of the estimator", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  TrialConfig trial;
  trial.seed = 23;
  trial.scheme = Scheme::Optimized;
  trial.users = {user_at_block(sc, 10)};
  trial.max_cycles = 6;

  std::string reference = trial_csv(run_localization(sc, chan, cm, trial));

  // without obstruction the body metadata must not influence anything
  TrialConfig perturbed = trial;
  perturbed.users[0].occlusion_radius = 7.0;
  perturbed.users[0].block = 0;
  CHECK(trial_csv(run_localization(sc, chan, cm, perturbed)) == reference);

  // a lone user has no obstructors, so the flag is inert
  TrialConfig obstructed = trial;
  obstructed.obstruction = true;
  CHECK(trial_csv(run_localization(sc, chan, cm, obstructed)) == reference);
}

TEST_CASE("trial validation rejects unusable setups", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  TrialConfig trial;
  trial.seed = 1;
  CHECK_THROWS_AS(run_localization(sc, chan, cm, trial), std::invalid_argument);  // no users

  trial.users = {UserBody{{5.0, 5.0, 5.0}, -1, 0.15}};
  CHECK_THROWS_AS(run_localization(sc, chan, cm, trial), std::invalid_argument);  // outside

  trial.users[0].position = block_center(sc.grid, 3);
  trial.max_cycles = 0;
  CHECK_THROWS_AS(run_localization(sc, chan, cm, trial), std::invalid_argument);

  trial.max_cycles = 5;
  CriticalMeasurements mismatched = cm;
  mismatched.blocks = 26;
  mismatched.base.pop_back();
  CHECK_THROWS_AS(run_localization(sc, chan, mismatched, trial), std::invalid_argument);
}

TEST_CASE("users outside the box are allowed when requested", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  TrialConfig trial;
  trial.seed = 5;
  trial.users = {UserBody{{0.95, 0.3, 0.0}, -1, 0.15}};  // outside on y
  trial.max_cycles = 3;
  CHECK_THROWS_AS(run_localization(sc, chan, cm, trial), std::invalid_argument);

  trial.allow_outside = true;
  TrialRecord rec = run_localization(sc, chan, cm, trial);
  REQUIRE(!rec.cycles.empty());
  // the error is measured from the true (outside) position
  CHECK(rec.cycles.back().errors[0] >=
        distance(trial.users[0].position, block_center(sc.grid, nearest_block(sc.grid, trial.users[0].position))) - 1e-12);
}

TEST_CASE("sigma resolution prefers explicit values and floors at zero", "[harness]") {
  Scene sc = small_scene();
  ChannelParams params;
  ChannelModel chan = make_channel(params);
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  CHECK(resolve_channel_sigma(chan, cm) == Approx(calibrated_sigma(cm)).epsilon(1e-15));

  ChannelParams fixed = params;
  fixed.sigma_w = 1.5e-6;
  CHECK(resolve_channel_sigma(make_channel(fixed), cm) == 1.5e-6);

  // estimator side: explicit override, else the channel value, floored above zero
  LocalizerParams loc;
  CHECK(resolve_estimator_sigma(loc, 2e-6, cm) == 2e-6);
  loc.sigma = 3e-6;
  CHECK(resolve_estimator_sigma(loc, 2e-6, cm) == 3e-6);
  LocalizerParams plain;
  double floored = resolve_estimator_sigma(plain, 0.0, cm);
  CHECK(floored > 0.0);
  CHECK(floored == Approx(1e-7 * mean_base_rss(cm)).epsilon(1e-12));
}

TEST_CASE("localization error is the distance to the estimated block center", "[harness]") {
  Scene sc = small_scene();
  Vec3 c = block_center(sc.grid, 13);
  CHECK(localization_error(c, 13, sc.grid) == 0.0);
  CHECK(localization_error(c, 14, sc.grid) == Approx(0.05).epsilon(1e-12));
  Vec3 off = c + Vec3{0.01, 0.0, 0.0};
  CHECK(localization_error(off, 13, sc.grid) == Approx(0.01).epsilon(1e-12));
}

TEST_CASE("per-cycle lookups carry the last value forward", "[harness]") {
  Scene sc = small_scene();
  ChannelParams params;
  params.sigma_w = 0.0;
  ChannelModel chan = make_channel(params);
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  TrialConfig trial;
  trial.seed = 13;
  trial.scheme = Scheme::Optimized;
  trial.users = {user_at_block(sc, 20)};
  trial.max_cycles = 50;

  TrialRecord rec = run_localization(sc, chan, cm, trial);
  REQUIRE(rec.cycles.size() < 50);  // exact observations terminate early
  int last = rec.cycles.back().cycle;
  CHECK(error_at_cycle(rec, last) == mean_user_error(rec.cycles.back()));
  CHECK(error_at_cycle(rec, 49) == mean_user_error(rec.cycles.back()));
  CHECK(loss_at_cycle(rec, 49) == rec.cycles.back().loss_lu);
  CHECK(error_at_cycle(rec, 0) == mean_user_error(rec.cycles.front()));

  TrialRecord empty;
  CHECK_THROWS_AS(error_at_cycle(empty, 0), std::invalid_argument);
}

TEST_CASE("canned user layouts are nested and centered", "[harness]") {
  BlockGrid g = default_scene(1.0).grid;

  auto one = default_user_positions(g, 1);
  auto two = default_user_positions(g, 2);
  auto three = default_user_positions(g, 3);
  REQUIRE(one.size() == 1);
  REQUIRE(three.size() == 3);

  // adding a user never moves the existing ones
  for (size_t i = 0; i < two.size(); ++i) CHECK(two[i].block == three[i].block);
  CHECK(one[0].block == two[0].block);

  // center block first, then maximal spread along y
  CHECK(one[0].position.y == Approx(0.025).epsilon(1e-12));
  CHECK(two[1].position.y == Approx(-0.175).epsilon(1e-12));
  CHECK(three[2].position.y == Approx(0.225).epsilon(1e-12));
  for (const UserBody& u : three) {
    CHECK(u.position.x == Approx(1.025).epsilon(1e-12));
    CHECK(u.position.z == Approx(0.025).epsilon(1e-12));
  }

  CHECK_THROWS_AS(default_user_positions(g, 4), std::invalid_argument);
  CHECK_THROWS_AS(default_user_positions(g, 0), std::invalid_argument);
}

TEST_CASE("obstruction scenario stages one user behind another", "[harness]") {
  TrialConfig trial = obstruction_scenario(2.75);
  REQUIRE(trial.users.size() == 2);
  CHECK(trial.users[0].position == Vec3{2.5, 0.0, 0.0});
  CHECK(trial.users[1].position == Vec3{3.0, 0.0, 0.0});
  CHECK(trial.users[0].occlusion_radius == Approx(0.15));
  CHECK(trial.obstruction);
  CHECK(trial.allow_outside);

  TrialConfig shifted = obstruction_scenario(2.75, 0.25);
  CHECK(shifted.users[0].position.y == Approx(0.25));
  CHECK(shifted.users[1].position.y == 0.0);

  CHECK_THROWS_AS(obstruction_scenario(0.9), std::invalid_argument);
}

TEST_CASE("blocker geometry at the reference obstruction distance", "[harness]") {
  // at lateral offset zero the front user shadows the rear user's direct path
  // and every surface element; a quarter-meter sidestep clears all 16 links
  Scene sc = default_scene(2.75);
  for (double lateral : {0.0, 0.25, 0.5}) {
    TrialConfig trial = obstruction_scenario(2.75, lateral);
    const UserBody& blocker = trial.users[0];
    const Vec3 rear = trial.users[1].position;

    int blocked = 0;
    for (int m = 0; m < 16; ++m) {
      if (segment_blocked(element_center(sc.surface, m), rear, blocker)) ++blocked;
    }
    bool los = segment_blocked(sc.surface.center, rear, blocker);
    if (lateral == 0.0) {
      CHECK(blocked == 16);
      CHECK(los);
    } else {
      CHECK(blocked == 0);
      CHECK_FALSE(los);
    }
    // the emitter's incident paths onto the surface stay clear throughout
    int emitter_blocked = 0;
    for (int m = 0; m < 16; ++m) {
      if (segment_blocked(sc.emitter.position, element_center(sc.surface, m), blocker)) ++emitter_blocked;
    }
    CHECK(emitter_blocked == 0);
  }
}

TEST_CASE("summary statistics use nearest-rank percentiles", "[harness]") {
  std::vector<double> v{9, 1, 8, 2, 7, 3, 6, 4, 5, 10};
  CHECK(mean_of(v) == Approx(5.5).epsilon(1e-15));
  CHECK(median_of(v) == Approx(5.5).epsilon(1e-15));
  CHECK(percentile_of(v, 0.9) == 9.0);
  CHECK(percentile_of(v, 1.0) == 10.0);
  CHECK(percentile_of(v, 0.05) == 1.0);

  std::vector<double> odd{3, 1, 2};
  CHECK(median_of(odd) == 2.0);

  std::vector<double> empty;
  CHECK_THROWS_AS(mean_of(empty), std::invalid_argument);
  CHECK_THROWS_AS(median_of(empty), std::invalid_argument);
  CHECK_THROWS_AS(percentile_of(empty, 0.5), std::invalid_argument);
}

TEST_CASE("monte-carlo summaries aggregate per-repetition trials", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  MonteCarloArm arm;
  arm.label = "fixed-demo";
  arm.scene = sc;
  arm.chan = chan;
  arm.cm = cm;
  arm.trial.seed = 100;
  arm.trial.scheme = Scheme::Fixed;
  arm.trial.users = {user_at_block(sc, 4)};
  arm.trial.max_cycles = 4;
  arm.trial.termination.beta1 = 0.0;
  arm.d_m = 1.0;

  SummaryStats stats = run_monte_carlo({arm}, 5);
  REQUIRE(stats.arms.size() == 1);
  const ArmSummary& s = stats.arms[0];
  CHECK(s.label == "fixed-demo");
  CHECK(s.scheme == Scheme::Fixed);
  CHECK(s.users == 1);
  CHECK(s.cycle_budget == 3);
  REQUIRE(s.final_errors.size() == 5);

  // each repetition equals a standalone trial at seed + r
  for (int r = 0; r < 5; ++r) {
    TrialConfig t = arm.trial;
    t.seed = arm.trial.seed + static_cast<std::uint64_t>(r);
    TrialRecord rec = run_localization(sc, chan, cm, t);
    REQUIRE(s.final_errors[static_cast<size_t>(r)] == mean_user_error(rec.cycles.back()));
  }

  // aggregate stats agree with the raw repetition errors
  CHECK(s.mean_error == Approx(mean_of(s.final_errors)).epsilon(1e-15));
  CHECK(s.median_error == Approx(median_of(s.final_errors)).epsilon(1e-15));
  CHECK(s.p90_error == Approx(percentile_of(s.final_errors, 0.9)).epsilon(1e-15));
  for (size_t i = 1; i < s.error_cdf.size(); ++i) REQUIRE(s.error_cdf[i] >= s.error_cdf[i - 1]);
  REQUIRE(s.mean_error_curve.size() == 4);
  REQUIRE(s.mean_loss_curve.size() == 4);

  // byte-identical on replay
  SummaryStats again = run_monte_carlo({arm}, 5);
  CHECK(summary_csv(stats) == summary_csv(again));
}

TEST_CASE("trial CSV round-trips through the parser", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  TrialConfig trial;
  trial.seed = 55;
  trial.scheme = Scheme::Random;
  trial.users = {user_at_block(sc, 4), user_at_block(sc, 22)};
  trial.max_cycles = 5;
  trial.termination.beta1 = 0.0;

  TrialRecord rec = run_localization(sc, chan, cm, trial);
  std::string csv = trial_csv(rec);
  std::vector<TrialCsvRow> rows = parse_trial_csv(csv);
  REQUIRE(rows.size() == rec.cycles.size() * 2);

  size_t r = 0;
  for (const CycleLog& log : rec.cycles) {
    for (int i = 0; i < 2; ++i, ++r) {
      REQUIRE(rows[r].cycle == log.cycle);
      REQUIRE(rows[r].config == config_to_string(log.config));
      REQUIRE(rows[r].user == i);
      // %.17g output parses back to the identical double
      REQUIRE(rows[r].rss_w == log.rss[static_cast<size_t>(i)]);
      REQUIRE(rows[r].loss_lu_m == log.loss_lu);
      REQUIRE(rows[r].error_m == log.errors[static_cast<size_t>(i)]);
      REQUIRE(rows[r].sim_time_ms == 100.0 * log.cycle);
    }
  }

  CHECK_THROWS_AS(parse_trial_csv("not,a,header\n"), std::runtime_error);
  std::string short_row = std::string(kTrialCsvHeader) + "\n1,00,0,1.0\n";
  CHECK_THROWS_AS(parse_trial_csv(short_row), std::runtime_error);
}

TEST_CASE("summary CSV round-trips through the parser", "[harness]") {
  Scene sc = small_scene();
  ChannelModel chan = make_channel(ChannelParams{});
  CriticalMeasurements cm = run_offline_phase(sc, chan, 2);

  MonteCarloArm arm;
  arm.label = "demo";
  arm.scene = sc;
  arm.chan = chan;
  arm.cm = cm;
  arm.trial.seed = 9;
  arm.trial.scheme = Scheme::Optimized;
  arm.trial.users = {user_at_block(sc, 4)};
  arm.trial.max_cycles = 3;
  arm.d_m = 1.0;

  SummaryStats stats = run_monte_carlo({arm, arm}, 2);
  std::string csv = summary_csv(stats);
  std::vector<SummaryCsvRow> rows = parse_summary_csv(csv);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].scheme == "optimized");
  CHECK(rows[0].d_m == 1.0);
  CHECK(rows[0].users == 1);
  CHECK(rows[0].cycles == 2);
  CHECK(rows[0].mean_error_m == stats.arms[0].mean_error);
  CHECK(rows[0].median_error_m == stats.arms[0].median_error);
  CHECK(rows[0].p90_error_m == stats.arms[0].p90_error);

  CHECK_THROWS_AS(parse_summary_csv("bogus\n"), std::runtime_error);
}

TEST_CASE("scheme names parse back to themselves", "[harness]") {
  for (Scheme s : {Scheme::Fixed, Scheme::Random, Scheme::Optimized}) {
    CHECK(parse_scheme(scheme_name(s)) == s);
  }
  CHECK(std::string(scheme_name(Scheme::Optimized)) == "optimized");
  CHECK_THROWS_AS(parse_scheme("Fixed"), std::invalid_argument);
  CHECK_THROWS_AS(parse_scheme(""), std::invalid_argument);
}

TEST_CASE("doubles survive the CSV formatter bit-exactly", "[harness]") {
  for (double v : {1.0 / 3.0, 5.5371547357693998e-06, 0.0, 1e-300, 123456.789}) {
    CHECK(detail::parse_f64(format_double(v)) == v);
  }
}

TEST_CASE("text files land atomically at their destination", "[harness]") {
  auto dir = std::filesystem::temp_directory_path() / "harness_write_test";
  std::filesystem::create_directories(dir);
  auto file = dir / "out.csv";
  write_text_file(file, "hello\n");
  std::ifstream in(file);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == "hello\n");
  in.close();
  std::filesystem::remove_all(dir);
}
