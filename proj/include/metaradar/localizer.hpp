#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "metaradar/radiomap.hpp"

namespace metaradar {

// ---------------------------------------------------------------------------
// Location posterior: one probability row per user over the blocks.

struct Posterior {
  int users = 0;
  int blocks = 0;
  std::vector<double> p;  // row-major, users x blocks

  double at(int i, int n) const { return p[static_cast<size_t>(i) * blocks + n]; }
  double& at(int i, int n) { return p[static_cast<size_t>(i) * blocks + n]; }
};

inline Posterior init_posterior(int users, int blocks) {
  if (users < 1 || blocks < 1) throw std::invalid_argument("posterior needs at least one user and block");
  Posterior post{users, blocks, std::vector<double>(static_cast<size_t>(users) * blocks,
                                                    1.0 / static_cast<double>(blocks))};
  return post;
}

inline bool posterior_rows_normalized(const Posterior& post, double tol = 1e-9) {
  for (int i = 0; i < post.users; ++i) {
    double sum = 0.0;
    for (int n = 0; n < post.blocks; ++n) {
      double v = post.at(i, n);
      if (v < 0.0 || !std::isfinite(v)) return false;
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) return false;
  }
  return true;
}

// Gaussian observation density.
inline double likelihood(double s, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("observation sigma must be positive");
  double z = (s - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * kPi));
}

struct UpdateOutcome {
  bool any_row_reset = false;  // a row underflowed to nothing and was restarted uniform
};

// Bayes update in the log domain. Each row is scaled by its running maximum
// before exponentiation, so products of many sharp likelihoods survive.
inline UpdateOutcome posterior_update(Posterior& post, std::span<const double> mu,
                                      std::span<const double> s, double sigma) {
  if (static_cast<int>(mu.size()) != post.blocks) {
    throw std::invalid_argument("radio map does not cover every block");
  }
  if (static_cast<int>(s.size()) != post.users) {
    throw std::invalid_argument("one RSS sample per user required");
  }
  if (!(sigma > 0.0)) throw std::domain_error("observation sigma must be positive");
  UpdateOutcome outcome;
  std::vector<double> logw(static_cast<size_t>(post.blocks));
  for (int i = 0; i < post.users; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (int n = 0; n < post.blocks; ++n) {
      double prior = post.at(i, n);
      double z = (s[static_cast<size_t>(i)] - mu[static_cast<size_t>(n)]) / sigma;
      double w = prior > 0.0 ? std::log(prior) - 0.5 * z * z : -std::numeric_limits<double>::infinity();
      logw[static_cast<size_t>(n)] = w;
      if (w > best) best = w;
    }
    double sum = 0.0;
    if (std::isfinite(best)) {
      for (int n = 0; n < post.blocks; ++n) {
        double v = std::exp(logw[static_cast<size_t>(n)] - best);
        post.at(i, n) = v;
        sum += v;
      }
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) {
      outcome.any_row_reset = true;
      for (int n = 0; n < post.blocks; ++n) post.at(i, n) = 1.0 / static_cast<double>(post.blocks);
      continue;
    }
    for (int n = 0; n < post.blocks; ++n) post.at(i, n) /= sum;
  }
  return outcome;
}

// Per-user most probable block; ties resolve to the lowest index.
inline std::vector<int> estimate_locations(const Posterior& post) {
  std::vector<int> est(static_cast<size_t>(post.users), 0);
  for (int i = 0; i < post.users; ++i) {
    double best = post.at(i, 0);
    int arg = 0;
    for (int n = 1; n < post.blocks; ++n) {
      if (post.at(i, n) > best) {
        best = post.at(i, n);
        arg = n;
      }
    }
    est[static_cast<size_t>(i)] = arg;
  }
  return est;
}

// ---------------------------------------------------------------------------
// Active block subset: blocks whose combined posterior mass exceeds alpha.
// An empty result falls back to the heaviest ceil(1/alpha) blocks so that the
// uniform prior still yields a workable set.

struct ActiveSet {
  std::vector<int> blocks;  // ascending
  bool fallback = false;
};

inline ActiveSet active_blocks(const Posterior& post, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("alpha must be nonnegative");
  std::vector<double> mass(static_cast<size_t>(post.blocks), 0.0);
  for (int i = 0; i < post.users; ++i) {
    for (int n = 0; n < post.blocks; ++n) mass[static_cast<size_t>(n)] += post.at(i, n);
  }
  ActiveSet out;
  for (int n = 0; n < post.blocks; ++n) {
    if (mass[static_cast<size_t>(n)] > alpha) out.blocks.push_back(n);
  }
  if (!out.blocks.empty()) return out;
  if (alpha == 0.0) return out;  // all mass zero cannot happen for a normalized posterior
  out.fallback = true;
  size_t want = std::min<size_t>(static_cast<size_t>(std::ceil(1.0 / alpha)),
                                 static_cast<size_t>(post.blocks));
  std::vector<int> order(static_cast<size_t>(post.blocks));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return mass[static_cast<size_t>(a)] > mass[static_cast<size_t>(b)];
  });
  order.resize(want);
  std::sort(order.begin(), order.end());
  out.blocks = std::move(order);
  return out;
}

// ---------------------------------------------------------------------------
// Localization loss. gamma holds pairwise block-center distances; mu the mean
// RSS per active block; p the posterior restricted to the active subset.

inline double half_distance(double mu_a, double mu_b) { return std::abs(mu_b - mu_a) / 2.0; }

inline std::vector<double> gamma_for_blocks(const BlockGrid& grid, std::span<const int> blocks) {
  size_t ne = blocks.size();
  std::vector<Vec3> centers(ne);
  for (size_t i = 0; i < ne; ++i) centers[i] = block_center(grid, blocks[i]);
  std::vector<double> gamma(ne * ne, 0.0);
  for (size_t a = 0; a < ne; ++a) {
    for (size_t b = a + 1; b < ne; ++b) {
      double d = distance(centers[a], centers[b]);
      gamma[a * ne + b] = d;
      gamma[b * ne + a] = d;
    }
  }
  return gamma;
}

inline std::vector<double> error_matrix(const BlockGrid& grid) {
  std::vector<int> all(static_cast<size_t>(block_count(grid)));
  std::iota(all.begin(), all.end(), 0);
  return gamma_for_blocks(grid, all);
}

struct LossParams {
  double sigma = 0.0;   // observation std, watts; must be positive
  double alpha = 1e-3;  // active-set mass threshold
};

inline void validate_loss_params(const LossParams& lp) {
  if (!(lp.sigma > 0.0)) throw std::invalid_argument("loss sigma must be positive");
  if (lp.alpha < 0.0) throw std::invalid_argument("alpha must be nonnegative");
}

namespace detail {

// Collapse the per-user posterior to per-block mass; the loss and its
// gradient only depend on the sum.
inline std::vector<double> block_mass(std::span<const double> p, int users, size_t ne) {
  if (p.size() != static_cast<size_t>(users) * ne) {
    throw std::invalid_argument("posterior slice does not match the active set");
  }
  std::vector<double> mass(ne, 0.0);
  for (int i = 0; i < users; ++i) {
    const double* row = p.data() + static_cast<size_t>(i) * ne;
    for (size_t n = 0; n < ne; ++n) mass[n] += row[n];
  }
  return mass;
}

// Exponent beyond which exp underflows to zero; skipping those pairs keeps
// concentrated posteriors cheap.
inline constexpr double kExpCutoff = 745.0;

}  // namespace detail

// Union-bound loss: sum over block pairs of gamma/2 weighted by a Gaussian
// tail factor of the RSS separation.
inline double loss_upper_bound(std::span<const double> p, int users, std::span<const double> mu,
                               std::span<const double> gamma, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("loss sigma must be positive");
  size_t ne = mu.size();
  if (gamma.size() != ne * ne) throw std::invalid_argument("gamma does not match the active set");
  std::vector<double> mass = detail::block_mass(p, users, ne);
  double inv8 = 1.0 / (8.0 * sigma * sigma);
  double acc = 0.0;
  for (size_t a = 0; a < ne; ++a) {
    for (size_t b = a + 1; b < ne; ++b) {
      double dmu = mu[a] - mu[b];
      double e = dmu * dmu * inv8;
      if (e >= detail::kExpCutoff) continue;
      acc += (mass[a] + mass[b]) * (0.5 * gamma[a * ne + b]) * std::exp(-e);
    }
  }
  return acc;
}

// Descent direction: the negative derivative of the union-bound loss with
// respect to each active block's mean RSS.
inline std::vector<double> loss_descent_direction(std::span<const double> p, int users,
                                                  std::span<const double> mu,
                                                  std::span<const double> gamma, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("loss sigma must be positive");
  size_t ne = mu.size();
  if (gamma.size() != ne * ne) throw std::invalid_argument("gamma does not match the active set");
  std::vector<double> mass = detail::block_mass(p, users, ne);
  double inv8 = 1.0 / (8.0 * sigma * sigma);
  double inv4 = 1.0 / (4.0 * sigma * sigma);
  std::vector<double> g(ne, 0.0);
  for (size_t a = 0; a < ne; ++a) {
    for (size_t b = a + 1; b < ne; ++b) {
      double dmu = mu[a] - mu[b];
      double e = dmu * dmu * inv8;
      if (e >= detail::kExpCutoff) continue;
      double w = (mass[a] + mass[b]) * (0.5 * gamma[a * ne + b]) * std::exp(-e) * inv4;
      g[a] += w * dmu;
      g[b] -= w * dmu;
    }
  }
  return g;
}

// Exact loss via decision regions: the observation axis is cut at midpoints
// between distinct means (nearest-mean rule, ties to the lower block index)
// and each region integrates the Gaussian of every source block.
inline double brute_force_loss(std::span<const double> p, int users, std::span<const double> mu,
                               std::span<const double> gamma, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("loss sigma must be positive");
  size_t ne = mu.size();
  if (ne > 64) throw std::invalid_argument("exact loss is limited to 64 active blocks");
  if (gamma.size() != ne * ne) throw std::invalid_argument("gamma does not match the active set");
  std::vector<double> mass = detail::block_mass(p, users, ne);

  std::vector<size_t> order(ne);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (mu[a] != mu[b]) return mu[a] < mu[b];
    return a < b;
  });
  // Regions belong to the first block of each run of equal means.
  std::vector<size_t> owner;
  for (size_t idx : order) {
    if (owner.empty() || mu[owner.back()] != mu[idx]) owner.push_back(idx);
  }
  auto cdf = [&](double x) { return 0.5 * std::erfc(-x / (sigma * std::sqrt(2.0))); };
  double acc = 0.0;
  for (size_t j = 0; j < owner.size(); ++j) {
    double lo = j == 0 ? -std::numeric_limits<double>::infinity()
                       : 0.5 * (mu[owner[j - 1]] + mu[owner[j]]);
    double hi = j + 1 == owner.size() ? std::numeric_limits<double>::infinity()
                                      : 0.5 * (mu[owner[j]] + mu[owner[j + 1]]);
    for (size_t n = 0; n < ne; ++n) {
      double g = gamma[n * ne + owner[j]];
      if (g == 0.0 || mass[n] == 0.0) continue;
      double prob = cdf(hi - mu[n]) - cdf(lo - mu[n]);
      acc += mass[n] * g * prob;
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Termination.

struct TerminationParams {
  double beta1 = 0.1;  // loss threshold, meters
  int beta2 = 500;     // cycle budget
};

inline bool should_terminate(double loss_lu, int cycle, const TerminationParams& t) {
  return loss_lu < t.beta1 || cycle > t.beta2;
}

// ---------------------------------------------------------------------------
// Configuration selection.

struct OptimizerParams {
  int z_u = 50;           // outer iteration budget
  double epsilon = 1e-6;  // required loss improvement, meters
  std::uint64_t seed = 0; // initial configuration draw
};

struct OptimizeResult {
  Configuration config;
  double loss = 0.0;
  double initial_loss = 0.0;
  int iterations = 0;
  bool fallback_active_set = false;
  std::vector<double> accepted_losses;  // strictly decreasing by more than epsilon
};

namespace detail {

inline double norm_sq(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

// mu for a configuration restricted to the active blocks.
inline void predict_mu(const CriticalMeasurements& cm, const Configuration& cfg,
                       std::span<const int> blocks, std::vector<double>& mu) {
  mu.resize(blocks.size());
  for (size_t i = 0; i < blocks.size(); ++i) mu[i] = predict_rss(cm, cfg, blocks[i]);
}

}  // namespace detail

// Loss of one configuration evaluated on the posterior's active subset.
inline double config_loss(const CriticalMeasurements& cm, const BlockGrid& grid,
                          const Posterior& post, const Configuration& cfg, const LossParams& lp) {
  validate_loss_params(lp);
  ActiveSet active = active_blocks(post, lp.alpha);
  size_t ne = active.blocks.size();
  std::vector<double> gamma = gamma_for_blocks(grid, active.blocks);
  std::vector<double> mu;
  detail::predict_mu(cm, cfg, active.blocks, mu);
  std::vector<double> slice(static_cast<size_t>(post.users) * ne);
  for (int i = 0; i < post.users; ++i) {
    for (size_t n = 0; n < ne; ++n) slice[static_cast<size_t>(i) * ne + n] = post.at(i, active.blocks[n]);
  }
  return loss_upper_bound(slice, post.users, mu, gamma, lp.sigma);
}

// Gradient-guided coordinate search over element states. Each outer iteration
// flips at most one element: candidates must move the predicted RSS along the
// current descent direction more closely than the incumbent move and must
// improve the loss by more than epsilon.
inline OptimizeResult optimize_configuration(const CriticalMeasurements& cm, const BlockGrid& grid,
                                             const Posterior& post, const OptimizerParams& op,
                                             const LossParams& lp) {
  validate_loss_params(lp);
  if (op.z_u < 0) throw std::invalid_argument("iteration budget must be nonnegative");
  ActiveSet active = active_blocks(post, lp.alpha);
  size_t ne = active.blocks.size();
  std::vector<double> gamma = gamma_for_blocks(grid, active.blocks);
  std::vector<double> slice(static_cast<size_t>(post.users) * ne);
  for (int i = 0; i < post.users; ++i) {
    for (size_t n = 0; n < ne; ++n) slice[static_cast<size_t>(i) * ne + n] = post.at(i, active.blocks[n]);
  }

  Engine eng(op.seed);
  OptimizeResult res;
  res.fallback_active_set = active.fallback;
  res.config = random_configuration(cm.elements, cm.states, eng);

  std::vector<double> mu_cur;
  detail::predict_mu(cm, res.config, active.blocks, mu_cur);
  double loss_cur = loss_upper_bound(slice, post.users, mu_cur, gamma, lp.sigma);
  res.initial_loss = loss_cur;

  std::vector<double> g(ne), d_best(ne), d_cand(ne), mu_cand, mu_best;
  Configuration cfg_cand, cfg_best;
  for (int z = 1; z <= op.z_u; ++z) {
    g = loss_descent_direction(slice, post.users, mu_cur, gamma, lp.sigma);
    double gn = std::sqrt(detail::norm_sq(g));
    if (gn > 0.0) {
      for (double& x : g) x /= gn;
    }
    std::fill(d_best.begin(), d_best.end(), 0.0);
    double best_gap = 0.0;  // |g - d_best|^2 tracked incrementally
    for (size_t i = 0; i < ne; ++i) best_gap += g[i] * g[i];
    bool changed = false;
    double loss_best = loss_cur;

    for (int m = 0; m < cm.elements; ++m) {
      for (int s = 0; s < cm.states; ++s) {
        if (s == res.config.states[static_cast<size_t>(m)]) continue;
        cfg_cand = res.config;
        cfg_cand.states[static_cast<size_t>(m)] = static_cast<ElementState>(s);
        detail::predict_mu(cm, cfg_cand, active.blocks, mu_cand);
        double dn = 0.0;
        for (size_t i = 0; i < ne; ++i) {
          d_cand[i] = mu_cand[i] - mu_cur[i];
          dn += d_cand[i] * d_cand[i];
        }
        if (dn > 0.0) {
          double inv = 1.0 / std::sqrt(dn);
          for (double& x : d_cand) x *= inv;
        }
        double gap = 0.0;
        for (size_t i = 0; i < ne; ++i) {
          double diff = g[i] - d_cand[i];
          gap += diff * diff;
        }
        if (gap >= best_gap) continue;
        double loss_cand = loss_upper_bound(slice, post.users, mu_cand, gamma, lp.sigma);
        if (loss_cand + op.epsilon < loss_cur) {
          cfg_best = cfg_cand;
          mu_best = mu_cand;
          d_best = d_cand;
          best_gap = gap;
          loss_best = loss_cand;
          changed = true;
        }
      }
    }
    res.iterations = z;
    if (!changed) break;
    res.config = cfg_best;
    mu_cur = mu_best;
    loss_cur = loss_best;
    res.accepted_losses.push_back(loss_cur);
  }
  res.loss = loss_cur;
  return res;
}

// ---------------------------------------------------------------------------
// Localizer parameter bag (JSON "localizer" section).

struct LocalizerParams {
  std::optional<double> sigma;  // estimator-side override of the channel sigma
  double alpha = 1e-3;
  double epsilon = 1e-6;
  int z_u = 50;
  double beta1 = 0.1;
  int beta2 = 500;
};

inline void validate_localizer_params(const LocalizerParams& p) {
  if (p.sigma && !(*p.sigma > 0.0)) throw std::invalid_argument("localizer sigma must be positive");
  if (p.alpha < 0.0) throw std::invalid_argument("alpha must be nonnegative");
  if (p.epsilon < 0.0) throw std::invalid_argument("epsilon must be nonnegative");
  if (p.z_u < 0) throw std::invalid_argument("z_u must be nonnegative");
  if (!(p.beta1 > 0.0)) throw std::invalid_argument("beta1 must be positive");
  if (p.beta2 < 1) throw std::invalid_argument("beta2 must be at least 1");
}

}  // namespace metaradar
