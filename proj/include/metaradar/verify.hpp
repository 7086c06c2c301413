#pragma once

#include <string>
#include <vector>

#include "metaradar/harness.hpp"

namespace metaradar {

struct VerifyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline void expect(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline double rel_gap(double a, double b) {
  double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

// Random loss instance: block positions in a unit box, means of the same
// magnitude as typical RSS values, one normalized posterior row.
struct LossInstance {
  std::vector<double> p;
  std::vector<double> mu;
  std::vector<double> gamma;
  double sigma = 0.0;
};

inline LossInstance random_loss_instance(Engine& eng, int max_blocks) {
  LossInstance inst;
  int ne = 2 + static_cast<int>(uniform_below(eng, static_cast<std::uint64_t>(max_blocks - 1)));
  std::vector<Vec3> pts(static_cast<size_t>(ne));
  for (auto& v : pts) v = Vec3{uniform01(eng), uniform01(eng), uniform01(eng)};
  inst.gamma.assign(static_cast<size_t>(ne) * ne, 0.0);
  for (int a = 0; a < ne; ++a) {
    for (int b = a + 1; b < ne; ++b) {
      double d = distance(pts[static_cast<size_t>(a)], pts[static_cast<size_t>(b)]);
      inst.gamma[static_cast<size_t>(a) * ne + b] = d;
      inst.gamma[static_cast<size_t>(b) * ne + a] = d;
    }
  }
  inst.mu.resize(static_cast<size_t>(ne));
  for (auto& m : inst.mu) m = uniform01(eng);
  inst.p.resize(static_cast<size_t>(ne));
  double sum = 0.0;
  for (auto& w : inst.p) {
    w = uniform01(eng) + 1e-3;
    sum += w;
  }
  for (auto& w : inst.p) w /= sum;
  inst.sigma = 0.05 + 0.45 * uniform01(eng);
  return inst;
}

}  // namespace detail

// Invariant suites over a concrete scene. Every suite is isolated: a throw
// becomes a failed result, never a crash of the caller.
inline std::vector<VerifyResult> run_verification(const Scene& sc, const ChannelParams& params,
                                                  const ReflectivityModel& reflect) {
  std::vector<VerifyResult> results;
  auto run = [&](const char* name, auto&& fn) {
    VerifyResult r;
    r.name = name;
    try {
      r.detail = fn();
      r.pass = true;
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = e.what();
    }
    results.push_back(std::move(r));
  };
  ChannelModel chan{params, reflect, MultipathModel{params.rho, params.multipath_seed}};

  run("scene", [&] {
    validate_scene(sc);
    for (int n : {0, block_count(sc.grid) / 2, block_count(sc.grid) - 1}) {
      Vec3 c = block_center(sc.grid, n);
      detail::expect(inside_grid(sc.grid, c), "block center escapes the grid");
      detail::expect(block_index_of(sc.grid, c) == n, "block index round trip failed");
    }
    DirectionAngles ap = direction_angles(sc.surface.center, sc.emitter.position, sc.surface.normal);
    char buf[64];
    std::snprintf(buf, sizeof buf, "emitter at polar %.4g deg, azimuth %.4g deg", ap.polar_deg,
                  ap.azimuth_deg);
    return std::string(buf);
  });

  run("reflectivity", [&] {
    validate_reflectivity(reflect);
    return std::to_string(reflect.table.size()) + " states, all magnitudes within unity";
  });

  run("channel", [&] {
    double lambda = wavelength(sc.emitter);
    ComplexSignal g1 = free_space_gain(1.0, lambda);
    detail::expect(detail::rel_gap(std::abs(g1), lambda / (4.0 * kPi)) < 1e-14,
                   "kernel amplitude drifted from lambda / (4 pi d)");
    ComplexSignal g2 = free_space_gain(2.0, lambda);
    detail::expect(std::abs(std::abs(g1) / std::abs(g2) - 2.0) < 1e-12, "kernel amplitude is not 1/d");
    Vec3 probe = block_center(sc.grid, block_count(sc.grid) / 2);
    ComplexSignal mp = multipath_gain_at(sc, chan.multipath, probe);
    detail::expect(detail::rel_gap(std::abs(mp), params.rho * std::abs(los_gain_at(sc, probe))) < 1e-12,
                   "multipath magnitude is not rho times the direct path");
    return std::string("free-space kernel and multipath magnitude check out");
  });

  run("radiomap", [&] {
    CriticalMeasurements cm = run_offline_phase(sc, chan, 1);
    int m = cm.elements, k = cm.states;
    size_t count = critical_configurations(m, k).size();
    detail::expect(count == static_cast<size_t>(m * k - m + 1),
                   "critical configuration count is off");
    Engine eng(7);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      Configuration cfg = random_configuration(m, k, eng);
      for (int rep = 0; rep < 10; ++rep) {
        int n = static_cast<int>(uniform_below(eng, static_cast<std::uint64_t>(cm.blocks)));
        ComplexSignal direct = received_signal(sc, chan, cfg, n);
        ComplexSignal predicted = predict_signal(cm, cfg, n);
        worst = std::max(worst, std::abs(direct - predicted) / std::abs(direct));
      }
    }
    detail::expect(worst < 1e-10, "delta superposition missed the direct evaluation");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu critical configurations, max relative gap %.3g", count, worst);
    return std::string(buf);
  });

  run("posterior", [&] {
    Posterior post = init_posterior(1, 2);
    std::vector<double> mu = {0.0, 1.0};
    std::vector<double> s = {0.0};
    posterior_update(post, mu, s, 0.5);
    detail::expect(std::abs(post.at(0, 0) - 0.8807970779778823) < 1e-12 &&
                       std::abs(post.at(0, 1) - 0.11920292202211755) < 1e-12,
                   "two-block posterior drifted from the closed form");
    detail::expect(posterior_rows_normalized(post), "posterior row does not sum to one");
    return std::string("two-block update matches the closed form");
  });

  run("gradient", [&] {
    Engine eng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      detail::LossInstance inst = detail::random_loss_instance(eng, 32);
      size_t ne = inst.mu.size();
      std::vector<double> descent =
          loss_descent_direction(inst.p, 1, inst.mu, inst.gamma, inst.sigma);
      double h = 1e-6;
      for (size_t q = 0; q < ne; ++q) {
        std::vector<double> hi = inst.mu, lo = inst.mu;
        hi[q] += h;
        lo[q] -= h;
        double fd = (loss_upper_bound(inst.p, 1, hi, inst.gamma, inst.sigma) -
                     loss_upper_bound(inst.p, 1, lo, inst.gamma, inst.sigma)) /
                    (2.0 * h);
        double analytic = -descent[q];
        double scale = std::max({std::abs(fd), std::abs(analytic), 1e-9});
        worst = std::max(worst, std::abs(fd - analytic) / scale);
      }
    }
    detail::expect(worst < 1e-5, "analytic gradient disagrees with finite differences");
    char buf[64];
    std::snprintf(buf, sizeof buf, "max relative error %.3g", worst);
    return std::string(buf);
  });

  run("loss-bound", [&] {
    Engine eng(13);
    for (int trial = 0; trial < 200; ++trial) {
      detail::LossInstance inst = detail::random_loss_instance(eng, 8);
      double lu = loss_upper_bound(inst.p, 1, inst.mu, inst.gamma, inst.sigma);
      double l = brute_force_loss(inst.p, 1, inst.mu, inst.gamma, inst.sigma);
      detail::expect(l <= lu * (1.0 + 1e-9) + 1e-15, "exact loss exceeded its upper bound");
    }
    return std::string("upper bound dominates the exact loss on 200 instances");
  });

  run("termination", [&] {
    TerminationParams t;
    detail::expect(should_terminate(0.05, 1, t), "small loss must stop the loop");
    detail::expect(!should_terminate(0.1, 1, t), "threshold loss must not stop the loop");
    detail::expect(should_terminate(0.5, 501, t), "cycle budget must stop the loop");
    detail::expect(!should_terminate(0.5, 500, t), "loop stopped one cycle early");
    return std::string("loss and cycle-budget rules agree with the contract");
  });

  return results;
}

}  // namespace metaradar
