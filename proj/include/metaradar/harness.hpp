#pragma once

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "metaradar/localizer.hpp"

namespace metaradar {

// ---------------------------------------------------------------------------
// Worker pool. METARADAR_THREADS pins the worker count; results never depend
// on it because every parallel unit owns its slot and its own random stream.

inline int worker_count() {
  const char* env = std::getenv("METARADAR_THREADS");
  if (!env || !*env) {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1 || v > 4096) {
    throw std::invalid_argument("METARADAR_THREADS must be a positive integer");
  }
  return static_cast<int>(v);
}

template <class Fn>
inline void parallel_for(int count, int workers, Fn&& fn) {
  if (count <= 0) return;
  if (workers > count) workers = count;
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto body = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= count || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Offline phase: visit every block, measure every critical configuration,
// average the configured number of samples per measurement.

namespace detail {

inline constexpr std::uint64_t kOfflineTag = 0x6f66666c;  // offline sample streams
inline constexpr std::uint64_t kNoiseTag = 0x6e6f6973;    // online RSS noise
inline constexpr std::uint64_t kConfigTag = 0x636f6e66;   // per-cycle configuration draws

}  // namespace detail

inline CriticalMeasurements run_offline_phase(const Scene& sc, const ChannelModel& chan,
                                              std::uint64_t seed) {
  validate_scene(sc);
  int elements = element_count(sc.surface);
  int states = static_cast<int>(chan.reflect.table.size());
  int blocks = block_count(sc.grid);
  auto ids = critical_configurations(elements, states);
  std::vector<std::vector<ComplexSignal>> signals(ids.size(),
                                                  std::vector<ComplexSignal>(static_cast<size_t>(blocks)));
  int avg = chan.params.averaging;
  double pert = chan.params.offline_noise_w;
  // One stream per block keeps the result independent of visit order.
  parallel_for(blocks, worker_count(), [&](int n) {
    Engine eng(substream(seed, detail::kOfflineTag, static_cast<std::uint64_t>(n)));
    for (size_t q = 0; q < ids.size(); ++q) {
      ComplexSignal y = received_signal(sc, chan, ids[q].config, n);
      if (pert <= 0.0) {
        signals[q][static_cast<size_t>(n)] = y;  // noiseless measurements are exact
        continue;
      }
      ComplexSignal acc{0.0, 0.0};
      for (int a = 0; a < avg; ++a) {
        acc += y + ComplexSignal(pert * gaussian(eng), pert * gaussian(eng));
      }
      signals[q][static_cast<size_t>(n)] = acc / static_cast<double>(avg);
    }
  });
  CriticalMeasurements cm = deltas_from_measurements(elements, blocks, states, signals);
  cm.averaging = avg;
  cm.scene_hash = scene_hash32(sc, chan.params);
  return cm;
}

// ---------------------------------------------------------------------------
// Online trial.

enum class Scheme { Fixed, Random, Optimized };

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::Fixed: return "fixed";
    case Scheme::Random: return "random";
    case Scheme::Optimized: return "optimized";
  }
  throw std::logic_error("unreachable scheme");
}

inline Scheme parse_scheme(const std::string& text) {
  if (text == "fixed") return Scheme::Fixed;
  if (text == "random") return Scheme::Random;
  if (text == "optimized") return Scheme::Optimized;
  throw std::invalid_argument("unknown scheme '" + text + "' (fixed, random, optimized)");
}

struct TrialConfig {
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::Optimized;
  std::vector<UserBody> users;  // true positions
  int max_cycles = 501;         // hard cap on logged cycles, initial cycle included
  TerminationParams termination;
  bool obstruction = false;
  bool allow_outside = false;  // permit true positions outside the block grid
};

struct CycleLog {
  int cycle = 0;
  Configuration config;
  double loss_lu = 0.0;        // loss of this configuration under the pre-update posterior
  std::vector<double> rss;     // sampled RSS per user, watts
  std::vector<int> estimates;  // most probable block per user
  std::vector<double> errors;  // meters per user
};

struct TrialRecord {
  Scheme scheme = Scheme::Optimized;
  int users = 0;
  std::vector<CycleLog> cycles;
  std::vector<int> final_estimates;
};

inline double localization_error(const Vec3& true_pos, int est_block, const BlockGrid& grid) {
  return distance(true_pos, block_center(grid, est_block));
}

// Noisy measurement at the true position through the true channel. Bodies of
// the other users shadow the direct and element paths when obstruction is on.
inline double true_mean_rss(const Scene& sc, const ChannelModel& chan, const Configuration& cfg,
                            const std::vector<UserBody>& users, size_t i, bool obstruction) {
  if (!obstruction) return mean_rss_at(sc, chan, cfg, users[i].position);
  std::vector<UserBody> others;
  others.reserve(users.size() - 1);
  for (size_t j = 0; j < users.size(); ++j) {
    if (j != i) others.push_back(users[j]);
  }
  return std::norm(obstructed_received_signal_at(sc, chan, cfg, users[i].position, others));
}

inline double resolve_channel_sigma(const ChannelModel& chan, const CriticalMeasurements& cm) {
  return chan.params.sigma_w ? *chan.params.sigma_w : calibrated_sigma(cm);
}

// The estimator's sigma defaults to the channel's; a zero channel sigma gets
// a tiny floor so the Gaussian likelihood stays proper on noiseless runs.
inline double resolve_estimator_sigma(const LocalizerParams& loc, double sigma_ch,
                                      const CriticalMeasurements& cm) {
  double s = loc.sigma ? *loc.sigma : sigma_ch;
  if (s <= 0.0) s = 1e-7 * mean_base_rss(cm);
  return s;
}

inline TrialRecord run_localization(const Scene& sc, const ChannelModel& chan,
                                    const CriticalMeasurements& cm, const TrialConfig& trial,
                                    const LocalizerParams& loc = {}) {
  validate_localizer_params(loc);
  if (trial.users.empty()) throw std::invalid_argument("trial needs at least one user");
  if (trial.max_cycles < 1) throw std::invalid_argument("max_cycles must be at least 1");
  if (cm.blocks != block_count(sc.grid)) {
    throw std::invalid_argument("measurement set does not match the scene grid");
  }
  if (!trial.allow_outside) {
    for (const UserBody& u : trial.users) {
      if (!inside_grid(sc.grid, u.position)) {
        throw std::invalid_argument("user position outside the region of interest");
      }
    }
  }
  int users = static_cast<int>(trial.users.size());
  double sigma_ch = resolve_channel_sigma(chan, cm);
  double sigma_est = resolve_estimator_sigma(loc, sigma_ch, cm);
  LossParams lp{sigma_est, loc.alpha};

  Posterior post = init_posterior(users, cm.blocks);
  // One stream per receiver: a user's noise realization does not depend on
  // how many other users share the trial.
  std::vector<NoiseModel> noise;
  noise.reserve(static_cast<size_t>(users));
  for (int i = 0; i < users; ++i)
    noise.emplace_back(sigma_ch, substream(trial.seed, detail::kNoiseTag, static_cast<std::uint64_t>(i)));
  Configuration base_cfg = all_base_configuration(cm.elements);

  TrialRecord rec;
  rec.scheme = trial.scheme;
  rec.users = users;
  for (int k = 0;; ++k) {
    CycleLog log;
    log.cycle = k;
    if (k == 0 || trial.scheme == Scheme::Fixed) {
      log.config = base_cfg;
      log.loss_lu = config_loss(cm, sc.grid, post, log.config, lp);
    } else if (trial.scheme == Scheme::Random) {
      Engine eng(substream(trial.seed, detail::kConfigTag, static_cast<std::uint64_t>(k)));
      log.config = random_configuration(cm.elements, cm.states, eng);
      log.loss_lu = config_loss(cm, sc.grid, post, log.config, lp);
    } else {
      OptimizerParams op{loc.z_u, loc.epsilon,
                         substream(trial.seed, detail::kConfigTag, static_cast<std::uint64_t>(k))};
      OptimizeResult opt = optimize_configuration(cm, sc.grid, post, op, lp);
      log.config = opt.config;
      log.loss_lu = opt.loss;
    }

    log.rss.resize(static_cast<size_t>(users));
    for (int i = 0; i < users; ++i) {
      double mu = true_mean_rss(sc, chan, log.config, trial.users, static_cast<size_t>(i),
                                trial.obstruction);
      log.rss[static_cast<size_t>(i)] = sample_rss(noise[static_cast<size_t>(i)], mu);
    }

    std::vector<double> mu_map = full_radio_map(cm, log.config);
    posterior_update(post, mu_map, log.rss, sigma_est);
    log.estimates = estimate_locations(post);
    log.errors.resize(static_cast<size_t>(users));
    for (int i = 0; i < users; ++i) {
      log.errors[static_cast<size_t>(i)] =
          localization_error(trial.users[static_cast<size_t>(i)].position,
                             log.estimates[static_cast<size_t>(i)], sc.grid);
    }
    double loss_k = log.loss_lu;
    rec.cycles.push_back(std::move(log));
    if (should_terminate(loss_k, k + 1, trial.termination) || k + 1 >= trial.max_cycles) break;
  }
  rec.final_estimates = rec.cycles.back().estimates;
  return rec;
}

inline double mean_user_error(const CycleLog& log) {
  double acc = 0.0;
  for (double e : log.errors) acc += e;
  return acc / static_cast<double>(log.errors.size());
}

// Value at cycle k with carry-forward past early termination.
inline double error_at_cycle(const TrialRecord& rec, int k) {
  if (rec.cycles.empty()) throw std::invalid_argument("empty trial record");
  const CycleLog* last = &rec.cycles.front();
  for (const CycleLog& log : rec.cycles) {
    if (log.cycle > k) break;
    last = &log;
  }
  return mean_user_error(*last);
}

inline double loss_at_cycle(const TrialRecord& rec, int k) {
  if (rec.cycles.empty()) throw std::invalid_argument("empty trial record");
  const CycleLog* last = &rec.cycles.front();
  for (const CycleLog& log : rec.cycles) {
    if (log.cycle > k) break;
    last = &log;
  }
  return last->loss_lu;
}

// ---------------------------------------------------------------------------
// Canned layouts.

// Center-out placement along y at maximal separation: user t+1's layout is
// user t's plus one more body, so error curves over the user count compare
// nested scenarios, and the wide spacing keeps the layouts distinguishable
// for the configuration optimizer.
inline std::vector<UserBody> default_user_positions(const BlockGrid& grid, int users) {
  if (users < 1) throw std::invalid_argument("need at least one user");
  int step = std::max(1, (grid.ny - 2) / 2);
  std::vector<UserBody> out;
  out.reserve(static_cast<size_t>(users));
  for (int t = 0; t < users; ++t) {
    int j = grid.ny / 2 + (t + 1) / 2 * step * (t % 2 == 1 ? -1 : 1);
    if (j < 0 || j >= grid.ny) throw std::invalid_argument("more users than the grid can seat");
    int n = block_index(grid, grid.nx / 2, j, grid.nz / 2);
    out.push_back(UserBody{block_center(grid, n), n, 0.15});
  }
  return out;
}

// Two users on the surface axis, half a meter apart, the near one optionally
// shifted sideways. The near body shadows the far user's links.
inline TrialConfig obstruction_scenario(double d, double lateral = 0.0) {
  if (d < 1.0) throw std::invalid_argument("obstruction layout needs d of at least 1 m");
  TrialConfig trial;
  trial.users = {UserBody{{d - 0.25, lateral, 0.0}, -1, 0.15},
                 UserBody{{d + 0.25, 0.0, 0.0}, -1, 0.15}};
  trial.obstruction = true;
  trial.allow_outside = true;
  return trial;
}

// ---------------------------------------------------------------------------
// Monte-Carlo aggregation.

struct MonteCarloArm {
  std::string label;
  Scene scene;
  ChannelModel chan;
  CriticalMeasurements cm;
  TrialConfig trial;  // trial.seed is the base; repetition r runs with seed + r
  LocalizerParams loc;
  double d_m = 0.0;  // reported surface-to-region distance
};

struct ArmSummary {
  std::string label;
  Scheme scheme = Scheme::Optimized;
  double d_m = 0.0;
  int users = 0;
  int cycle_budget = 0;  // online cycles after the initial one
  std::vector<double> final_errors;  // per repetition, mean over users
  std::vector<double> error_cdf;     // final errors sorted ascending
  std::vector<double> mean_error_curve;  // per cycle, carry-forward mean across repetitions
  std::vector<double> mean_loss_curve;
  double mean_error = 0.0;
  double median_error = 0.0;
  double p90_error = 0.0;
};

struct SummaryStats {
  std::vector<ArmSummary> arms;
};

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean of empty sample");
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sample");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Nearest-rank percentile, q in (0, 1].
inline double percentile_of(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile of empty sample");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("percentile must lie in (0, 1]");
  std::sort(v.begin(), v.end());
  size_t rank = static_cast<size_t>(std::ceil(q * static_cast<double>(v.size())));
  if (rank < 1) rank = 1;
  return v[rank - 1];
}

inline SummaryStats run_monte_carlo(const std::vector<MonteCarloArm>& arms, int repetitions) {
  if (repetitions < 1) throw std::invalid_argument("repetitions must be at least 1");
  int slots = static_cast<int>(arms.size()) * repetitions;
  std::vector<TrialRecord> records(static_cast<size_t>(slots));
  parallel_for(slots, worker_count(), [&](int slot) {
    const MonteCarloArm& arm = arms[static_cast<size_t>(slot) / repetitions];
    int rep = slot % repetitions;
    TrialConfig trial = arm.trial;
    trial.seed = arm.trial.seed + static_cast<std::uint64_t>(rep);
    records[static_cast<size_t>(slot)] = run_localization(arm.scene, arm.chan, arm.cm, trial, arm.loc);
  });

  SummaryStats stats;
  stats.arms.reserve(arms.size());
  for (size_t a = 0; a < arms.size(); ++a) {
    const MonteCarloArm& arm = arms[a];
    ArmSummary summary;
    summary.label = arm.label;
    summary.scheme = arm.trial.scheme;
    summary.d_m = arm.d_m;
    summary.users = static_cast<int>(arm.trial.users.size());
    summary.cycle_budget = arm.trial.max_cycles - 1;
    int horizon = 0;
    for (int r = 0; r < repetitions; ++r) {
      const TrialRecord& rec = records[a * static_cast<size_t>(repetitions) + r];
      summary.final_errors.push_back(mean_user_error(rec.cycles.back()));
      horizon = std::max(horizon, rec.cycles.back().cycle + 1);
    }
    summary.mean_error_curve.resize(static_cast<size_t>(horizon));
    summary.mean_loss_curve.resize(static_cast<size_t>(horizon));
    for (int k = 0; k < horizon; ++k) {
      double esum = 0.0, lsum = 0.0;
      for (int r = 0; r < repetitions; ++r) {
        const TrialRecord& rec = records[a * static_cast<size_t>(repetitions) + r];
        esum += error_at_cycle(rec, k);
        lsum += loss_at_cycle(rec, k);
      }
      summary.mean_error_curve[static_cast<size_t>(k)] = esum / repetitions;
      summary.mean_loss_curve[static_cast<size_t>(k)] = lsum / repetitions;
    }
    summary.error_cdf = summary.final_errors;
    std::sort(summary.error_cdf.begin(), summary.error_cdf.end());
    summary.mean_error = mean_of(summary.final_errors);
    summary.median_error = median_of(summary.final_errors);
    summary.p90_error = percentile_of(summary.final_errors, 0.9);
    stats.arms.push_back(std::move(summary));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// CSV emission. Doubles are printed with %.17g so parsing them back is exact.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kTrialCsvHeader = "cycle_k,config,user,rss_w,loss_lu_m,error_m,sim_time_ms";
inline constexpr const char* kSummaryCsvHeader =
    "scheme,d_m,users,cycles,mean_error_m,median_error_m,p90_error_m";

inline std::string trial_csv(const TrialRecord& rec) {
  std::string out = kTrialCsvHeader;
  out += '\n';
  for (const CycleLog& log : rec.cycles) {
    std::string cfg = config_to_string(log.config);
    for (int i = 0; i < rec.users; ++i) {
      out += std::to_string(log.cycle);
      out += ',';
      out += cfg;
      out += ',';
      out += std::to_string(i);
      out += ',';
      out += format_double(log.rss[static_cast<size_t>(i)]);
      out += ',';
      out += format_double(log.loss_lu);
      out += ',';
      out += format_double(log.errors[static_cast<size_t>(i)]);
      out += ',';
      out += format_double(100.0 * log.cycle);
      out += '\n';
    }
  }
  return out;
}

inline std::string summary_csv(const SummaryStats& stats) {
  std::string out = kSummaryCsvHeader;
  out += '\n';
  for (const ArmSummary& arm : stats.arms) {
    out += scheme_name(arm.scheme);
    out += ',';
    out += format_double(arm.d_m);
    out += ',';
    out += std::to_string(arm.users);
    out += ',';
    out += std::to_string(arm.cycle_budget);
    out += ',';
    out += format_double(arm.mean_error);
    out += ',';
    out += format_double(arm.median_error);
    out += ',';
    out += format_double(arm.p90_error);
    out += '\n';
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  detail::write_file_atomic(path, text);
}

// ---------------------------------------------------------------------------
// CSV ingestion (round-trip checks and downstream tooling).

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

inline double parse_f64(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw std::runtime_error("bad numeric field '" + s + "'");
  return v;
}

inline int parse_int(const std::string& s) {
  char* end = nullptr;
  long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw std::runtime_error("bad integer field '" + s + "'");
  return static_cast<int>(v);
}

}  // namespace detail

struct TrialCsvRow {
  int cycle = 0;
  std::string config;
  int user = 0;
  double rss_w = 0.0;
  double loss_lu_m = 0.0;
  double error_m = 0.0;
  double sim_time_ms = 0.0;
};

inline std::vector<TrialCsvRow> parse_trial_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTrialCsvHeader) {
    throw std::runtime_error("missing trial CSV header");
  }
  std::vector<TrialCsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 7) throw std::runtime_error("trial CSV row needs 7 fields");
    rows.push_back(TrialCsvRow{detail::parse_int(f[0]), f[1], detail::parse_int(f[2]),
                               detail::parse_f64(f[3]), detail::parse_f64(f[4]),
                               detail::parse_f64(f[5]), detail::parse_f64(f[6])});
  }
  return rows;
}

struct SummaryCsvRow {
  std::string scheme;
  double d_m = 0.0;
  int users = 0;
  int cycles = 0;
  double mean_error_m = 0.0;
  double median_error_m = 0.0;
  double p90_error_m = 0.0;
};

inline std::vector<SummaryCsvRow> parse_summary_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kSummaryCsvHeader) {
    throw std::runtime_error("missing summary CSV header");
  }
  std::vector<SummaryCsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 7) throw std::runtime_error("summary CSV row needs 7 fields");
    rows.push_back(SummaryCsvRow{f[0], detail::parse_f64(f[1]), detail::parse_int(f[2]),
                                 detail::parse_int(f[3]), detail::parse_f64(f[4]),
                                 detail::parse_f64(f[5]), detail::parse_f64(f[6])});
  }
  return rows;
}

}  // namespace metaradar
