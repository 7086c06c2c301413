#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaradar/rng.hpp"
#include "metaradar/scene.hpp"

namespace metaradar {

using ComplexSignal = std::complex<double>;

// ---------------------------------------------------------------------------
// Element states and configurations.
// A state is an index into the reflectivity table; state 0 is the base state
// every element rests in while another element is being characterized.

using ElementState = std::uint8_t;

struct Configuration {
  std::vector<ElementState> states;
};

inline bool operator==(const Configuration& a, const Configuration& b) { return a.states == b.states; }

inline Configuration all_base_configuration(int elements) {
  return Configuration{std::vector<ElementState>(static_cast<size_t>(elements), ElementState{0})};
}

inline Configuration random_configuration(int elements, int num_states, Engine& eng) {
  Configuration c;
  c.states.resize(static_cast<size_t>(elements));
  for (auto& s : c.states) s = static_cast<ElementState>(uniform_below(eng, static_cast<std::uint32_t>(num_states)));
  return c;
}

// Digit string, element 0 first; digit i is the state index of element i.
inline std::string config_to_string(const Configuration& c) {
  std::string out;
  out.reserve(c.states.size());
  for (ElementState s : c.states) {
    if (s > 9) throw std::domain_error("config strings support at most 10 states");
    out.push_back(static_cast<char>('0' + s));
  }
  return out;
}

inline Configuration config_from_string(const std::string& text, int elements, int num_states) {
  if (static_cast<int>(text.size()) != elements) {
    throw std::invalid_argument("config string must have one digit per element (" +
                                std::to_string(elements) + " expected)");
  }
  Configuration c;
  c.states.reserve(text.size());
  for (char ch : text) {
    if (ch < '0' || ch > '9') throw std::invalid_argument("config string must be decimal digits");
    int s = ch - '0';
    if (s >= num_states) throw std::invalid_argument("config digit exceeds the state count");
    c.states.push_back(static_cast<ElementState>(s));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Reflectivity.

struct ReflectivityModel {
  std::vector<ComplexSignal> table;  // per-state complex reflectivity, |r| <= 1
  // Optional angle dependence multiplying the table entry. Absent by default:
  // the measured table already averages over the deployment geometry.
  std::function<ComplexSignal(const DirectionAngles&, const DirectionAngles&)> angle_factor;
};

// Four-state table measured on the fabricated surface.
inline ReflectivityModel default_reflectivity() {
  ReflectivityModel m;
  m.table = {
      std::polar(0.95, deg2rad(-33.0)),
      std::polar(0.97, deg2rad(60.0)),
      std::polar(0.93, deg2rad(134.0)),
      std::polar(0.88, deg2rad(-136.0)),
  };
  return m;
}

inline void validate_reflectivity(const ReflectivityModel& m) {
  if (m.table.empty()) throw std::invalid_argument("reflectivity table is empty");
  for (size_t i = 0; i < m.table.size(); ++i) {
    if (std::abs(m.table[i]) > 1.0 + 1e-12) {
      throw std::invalid_argument("reflectivity magnitude exceeds 1 for state " + std::to_string(i + 1));
    }
  }
}

inline ComplexSignal reflectivity(const ReflectivityModel& m, ElementState s,
                                  const DirectionAngles& in, const DirectionAngles& out) {
  if (s >= m.table.size()) throw std::out_of_range("element state outside the reflectivity table");
  ComplexSignal r = m.table[s];
  if (m.angle_factor) r *= m.angle_factor(in, out);
  return r;
}

// ---------------------------------------------------------------------------
// Channel parameter bag (JSON "channel" section).

struct ChannelParams {
  std::optional<double> sigma_w;   // RSS observation std; absent selects the calibrated default
  double rho = 0.1;                // static multipath magnitude relative to the direct path
  double a_obs = 0.1;              // field attenuation on blocked links
  bool per_unit_mode = false;      // sum over unit cells instead of element centers
  int units_per_side = 12;         // unit cells per element edge in per-unit mode
  std::uint64_t multipath_seed = 0x6d657461u;
  double offline_noise_w = 0.0;    // complex perturbation std per offline sample
  int averaging = 16;              // samples averaged per offline measurement
};

inline void validate_channel_params(const ChannelParams& p) {
  if (p.sigma_w && *p.sigma_w < 0.0) throw std::invalid_argument("sigma_w must be nonnegative");
  if (p.rho < 0.0) throw std::invalid_argument("rho must be nonnegative");
  if (p.a_obs < 0.0 || p.a_obs > 1.0) throw std::invalid_argument("a_obs must lie in [0, 1]");
  if (p.units_per_side < 1) throw std::invalid_argument("units_per_side must be at least 1");
  if (p.offline_noise_w < 0.0) throw std::invalid_argument("offline_noise_w must be nonnegative");
  if (p.averaging < 1) throw std::invalid_argument("averaging count must be at least 1");
}

struct MultipathModel {
  double rho = 0.1;
  std::uint64_t seed = 0;
};

struct ChannelModel {
  ChannelParams params;
  ReflectivityModel reflect;
  MultipathModel multipath;
};

inline ChannelModel make_channel(const ChannelParams& p, ReflectivityModel r = default_reflectivity()) {
  validate_channel_params(p);
  validate_reflectivity(r);
  return ChannelModel{p, std::move(r), MultipathModel{p.rho, p.multipath_seed}};
}

// ---------------------------------------------------------------------------
// Free-space pieces.

// Complex baseband gain of a free-space path of length d.
inline ComplexSignal free_space_gain(double d, double lambda) {
  if (d <= 0.0) throw std::domain_error("path length must be positive");
  return std::polar(lambda / (4.0 * kPi * d), -2.0 * kPi * d / lambda);
}

// Signal arriving on element m from the emitter.
inline ComplexSignal incident_field_on_element(const Scene& sc, int m) {
  double lambda = wavelength(sc.emitter);
  double d = distance(sc.emitter.position, element_center(sc.surface, m));
  if (d == 0.0) throw std::domain_error("emitter coincides with element center");
  return sc.emitter.amplitude * free_space_gain(d, lambda);
}

namespace detail {

inline ComplexSignal point_scatter(const Scene& sc, const Vec3& source_pos, ComplexSignal r,
                                   const Vec3& p, double lambda) {
  double d = distance(source_pos, p);
  if (d == 0.0) throw std::domain_error("field point coincides with a reflecting element");
  double d_in = distance(sc.emitter.position, source_pos);
  if (d_in == 0.0) throw std::domain_error("emitter coincides with a reflecting element");
  return free_space_gain(d, lambda) * r * sc.emitter.amplitude * free_space_gain(d_in, lambda);
}

}  // namespace detail

// Contribution of element m in state s to the field at p. In per-unit mode
// the element is a grid of unit cells sharing the state; otherwise a single
// scatterer at the element center.
inline ComplexSignal element_term(const Scene& sc, const ChannelModel& chan, int m, ElementState s,
                                  const Vec3& p) {
  double lambda = wavelength(sc.emitter);
  Vec3 ec = element_center(sc.surface, m);
  ComplexSignal r;
  if (chan.reflect.angle_factor) {
    DirectionAngles in = direction_angles(ec, sc.emitter.position, sc.surface.normal);
    DirectionAngles out = direction_angles(ec, p, sc.surface.normal);
    r = reflectivity(chan.reflect, s, in, out);
  } else {
    r = reflectivity(chan.reflect, s, DirectionAngles{}, DirectionAngles{});
  }
  if (!chan.params.per_unit_mode) return detail::point_scatter(sc, ec, r, p, lambda);

  int u = chan.params.units_per_side;
  double unit_pitch = sc.surface.pitch / u;
  Vec3 ua = plane_row_axis(sc.surface.normal);
  Vec3 va = plane_col_axis(sc.surface.normal);
  ComplexSignal acc{0.0, 0.0};
  for (int a = 0; a < u; ++a) {
    for (int b = 0; b < u; ++b) {
      Vec3 pos = ec + ((a - 0.5 * (u - 1)) * unit_pitch) * ua + ((b - 0.5 * (u - 1)) * unit_pitch) * va;
      acc += detail::point_scatter(sc, pos, r, p, lambda);
    }
  }
  return acc;
}

inline ComplexSignal reflected_field_at(const Scene& sc, const ChannelModel& chan,
                                        const Configuration& cfg, const Vec3& p) {
  if (static_cast<int>(cfg.states.size()) != element_count(sc.surface)) {
    throw std::invalid_argument("configuration length does not match the element count");
  }
  ComplexSignal acc{0.0, 0.0};
  for (int m = 0; m < element_count(sc.surface); ++m) {
    acc += element_term(sc, chan, m, cfg.states[static_cast<size_t>(m)], p);
  }
  return acc;
}

inline ComplexSignal los_gain_at(const Scene& sc, const Vec3& p) {
  double d = distance(sc.emitter.position, p);
  if (d == 0.0) throw std::domain_error("field point coincides with the emitter");
  return free_space_gain(d, wavelength(sc.emitter));
}

inline ComplexSignal los_gain(const Scene& sc, int n) {
  return los_gain_at(sc, block_center(sc.grid, n));
}

// Static environment reflections for the block containing p: magnitude tied
// to the direct path, phase drawn once per block from the multipath seed.
inline ComplexSignal multipath_gain_at(const Scene& sc, const MultipathModel& mp, const Vec3& p) {
  if (mp.rho == 0.0) return {0.0, 0.0};
  int n = nearest_block(sc.grid, p);
  Engine eng(substream(mp.seed, 0x6d70, static_cast<std::uint64_t>(n)));
  double theta = 2.0 * kPi * uniform01(eng);
  return std::polar(mp.rho * std::abs(los_gain_at(sc, p)), theta);
}

inline ComplexSignal multipath_gain(const Scene& sc, const MultipathModel& mp, int n) {
  return multipath_gain_at(sc, mp, block_center(sc.grid, n));
}

// ---------------------------------------------------------------------------
// Received signal: direct path + configurable reflection + static multipath.

inline ComplexSignal received_signal_at(const Scene& sc, const ChannelModel& chan,
                                        const Configuration& cfg, const Vec3& p) {
  ComplexSignal x = sc.emitter.amplitude;
  return los_gain_at(sc, p) * x + reflected_field_at(sc, chan, cfg, p) +
         multipath_gain_at(sc, chan.multipath, p) * x;
}

inline ComplexSignal received_signal(const Scene& sc, const ChannelModel& chan,
                                     const Configuration& cfg, int n) {
  return received_signal_at(sc, chan, cfg, block_center(sc.grid, n));
}

inline double mean_rss_at(const Scene& sc, const ChannelModel& chan, const Configuration& cfg,
                          const Vec3& p) {
  return std::norm(received_signal_at(sc, chan, cfg, p));
}

inline double mean_rss(const Scene& sc, const ChannelModel& chan, const Configuration& cfg, int n) {
  return std::norm(received_signal(sc, chan, cfg, n));
}

// Shadowing: element and direct-path terms whose segment to p passes through
// another body are attenuated by a_obs in field amplitude. The static
// multipath term is unaffected. `others` must not contain the receiver.
inline ComplexSignal obstructed_received_signal_at(const Scene& sc, const ChannelModel& chan,
                                                   const Configuration& cfg, const Vec3& p,
                                                   const std::vector<UserBody>& others) {
  if (static_cast<int>(cfg.states.size()) != element_count(sc.surface)) {
    throw std::invalid_argument("configuration length does not match the element count");
  }
  auto blocked = [&](const Vec3& a) {
    for (const UserBody& b : others) {
      if (segment_blocked(a, p, b)) return true;
    }
    return false;
  };
  // Same association order as received_signal_at: with nothing blocked the
  // two paths agree bit for bit.
  ComplexSignal x = sc.emitter.amplitude;
  ComplexSignal los = los_gain_at(sc, p) * x;
  if (blocked(sc.emitter.position)) los *= chan.params.a_obs;
  ComplexSignal refl{0.0, 0.0};
  for (int m = 0; m < element_count(sc.surface); ++m) {
    ComplexSignal t = element_term(sc, chan, m, cfg.states[static_cast<size_t>(m)], p);
    if (blocked(element_center(sc.surface, m))) t *= chan.params.a_obs;
    refl += t;
  }
  return los + refl + multipath_gain_at(sc, chan.multipath, p) * x;
}

inline ComplexSignal obstructed_received_signal(const Scene& sc, const ChannelModel& chan,
                                                const Configuration& cfg, int n,
                                                const std::vector<UserBody>& others) {
  return obstructed_received_signal_at(sc, chan, cfg, block_center(sc.grid, n), others);
}

// ---------------------------------------------------------------------------
// RSS observation.

struct NoiseModel {
  double sigma = 0.0;
  Engine eng{0};

  NoiseModel(double sigma_w, std::uint64_t seed) : sigma(sigma_w), eng(seed) {
    if (sigma_w < 0.0) throw std::invalid_argument("noise sigma must be nonnegative");
  }
};

// Gaussian RSS sample clamped at zero; exact when sigma is zero.
inline double sample_rss(NoiseModel& nm, double mu) {
  if (mu < 0.0) throw std::domain_error("mean RSS must be nonnegative");
  if (nm.sigma == 0.0) return mu;
  double v = mu + nm.sigma * gaussian(nm.eng);
  return v < 0.0 ? 0.0 : v;
}

}  // namespace metaradar
