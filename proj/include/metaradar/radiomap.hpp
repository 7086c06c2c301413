#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaradar/channel.hpp"

namespace metaradar {

// ---------------------------------------------------------------------------
// Critical configurations: the all-base configuration plus every single
// element switched to every non-base state. Their measured signals are enough
// to predict any configuration by superposition.

struct CriticalConfig {
  int element = 0;  // 0 for the base entry
  int state = 0;    // 0 marks the base entry; otherwise a non-base state index
  Configuration config;
};

inline std::vector<CriticalConfig> critical_configurations(int elements, int states) {
  if (elements < 1) throw std::invalid_argument("element count must be at least 1");
  if (states < 1) throw std::invalid_argument("state count must be at least 1");
  std::vector<CriticalConfig> out;
  out.reserve(static_cast<size_t>(elements) * (states - 1) + 1);
  out.push_back({0, 0, all_base_configuration(elements)});
  for (int m = 0; m < elements; ++m) {
    for (int s = 1; s < states; ++s) {
      CriticalConfig cc{m, s, all_base_configuration(elements)};
      cc.config.states[static_cast<size_t>(m)] = static_cast<ElementState>(s);
      out.push_back(std::move(cc));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Offline measurement products: base signal per block plus per-element,
// per-state signal deltas. Deltas for the base state are identically zero and
// are not stored.

struct CriticalMeasurements {
  int elements = 0;  // M
  int blocks = 0;    // N
  int states = 0;    // table size
  int averaging = 1;
  std::array<std::uint8_t, 32> scene_hash{};
  std::vector<ComplexSignal> base;    // blocks entries
  std::vector<ComplexSignal> deltas;  // elements * (states-1) * blocks, block fastest

  // delta for element m switched to non-base state s at block n
  ComplexSignal delta(int m, int s, int n) const {
    return deltas[(static_cast<size_t>(m) * (states - 1) + (s - 1)) * blocks + n];
  }
};

inline void validate_measurements(const CriticalMeasurements& cm) {
  if (cm.elements < 1 || cm.blocks < 1 || cm.states < 1) {
    throw std::invalid_argument("measurement set has empty dimensions");
  }
  if (cm.base.size() != static_cast<size_t>(cm.blocks)) {
    throw std::invalid_argument("base signal vector does not cover every block");
  }
  size_t want = static_cast<size_t>(cm.elements) * (cm.states - 1) * cm.blocks;
  if (cm.deltas.size() != want) throw std::invalid_argument("delta array has the wrong size");
}

// Builds the delta set from per-configuration signal vectors ordered like
// critical_configurations(elements, states).
inline CriticalMeasurements deltas_from_measurements(int elements, int blocks, int states,
                                                     const std::vector<std::vector<ComplexSignal>>& signals) {
  auto ids = critical_configurations(elements, states);
  if (signals.size() != ids.size()) {
    throw std::invalid_argument("expected " + std::to_string(ids.size()) +
                                " critical measurement vectors, got " + std::to_string(signals.size()));
  }
  auto check = [&](const CriticalConfig& id, const std::vector<ComplexSignal>& v) {
    for (int n = 0; n < blocks; ++n) {
      if (n >= static_cast<int>(v.size()) || !std::isfinite(v[n].real()) || !std::isfinite(v[n].imag())) {
        throw std::invalid_argument("incomplete measurement for element " + std::to_string(id.element) +
                                    " state " + std::to_string(id.state) + " block " + std::to_string(n));
      }
    }
  };
  CriticalMeasurements cm;
  cm.elements = elements;
  cm.blocks = blocks;
  cm.states = states;
  check(ids[0], signals[0]);
  cm.base = signals[0];
  cm.deltas.resize(static_cast<size_t>(elements) * (states - 1) * blocks);
  for (size_t q = 1; q < ids.size(); ++q) {
    check(ids[q], signals[q]);
    const auto& id = ids[q];
    size_t off = (static_cast<size_t>(id.element) * (states - 1) + (id.state - 1)) * blocks;
    for (int n = 0; n < blocks; ++n) cm.deltas[off + n] = signals[q][n] - cm.base[n];
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Prediction. Compensated accumulation keeps the result independent of the
// element order to well below the acceptance tolerance.

namespace detail {

struct Kahan {
  double sum = 0.0;
  double c = 0.0;
  void add(double v) {
    double y = v - c;
    double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

}  // namespace detail

inline ComplexSignal predict_signal(const CriticalMeasurements& cm, const Configuration& cfg, int n) {
  if (static_cast<int>(cfg.states.size()) != cm.elements) {
    throw std::invalid_argument("configuration length does not match the measurement set");
  }
  if (n < 0 || n >= cm.blocks) throw std::out_of_range("block index out of range");
  detail::Kahan re, im;
  re.add(cm.base[n].real());
  im.add(cm.base[n].imag());
  for (int m = 0; m < cm.elements; ++m) {
    ElementState s = cfg.states[static_cast<size_t>(m)];
    if (s == 0) continue;
    if (s >= cm.states) throw std::out_of_range("configuration state outside the measured table");
    ComplexSignal d = cm.delta(m, s, n);
    re.add(d.real());
    im.add(d.imag());
  }
  return {re.sum, im.sum};
}

inline double predict_rss(const CriticalMeasurements& cm, const Configuration& cfg, int n) {
  return std::norm(predict_signal(cm, cfg, n));
}

struct RadioMapVector {
  Configuration config;
  std::vector<int> blocks;  // strictly increasing subset
  std::vector<double> mu;   // mean RSS per subset entry, watts
};

inline RadioMapVector radio_map(const CriticalMeasurements& cm, const Configuration& cfg,
                                std::span<const int> blocks) {
  RadioMapVector out;
  out.config = cfg;
  out.blocks.assign(blocks.begin(), blocks.end());
  for (size_t i = 1; i < out.blocks.size(); ++i) {
    if (out.blocks[i] <= out.blocks[i - 1]) throw std::invalid_argument("block subset must be strictly increasing");
  }
  out.mu.reserve(out.blocks.size());
  for (int n : out.blocks) out.mu.push_back(predict_rss(cm, cfg, n));
  return out;
}

inline std::vector<double> full_radio_map(const CriticalMeasurements& cm, const Configuration& cfg) {
  std::vector<double> mu(static_cast<size_t>(cm.blocks));
  for (int n = 0; n < cm.blocks; ++n) mu[static_cast<size_t>(n)] = predict_rss(cm, cfg, n);
  return mu;
}

inline double mean_base_rss(const CriticalMeasurements& cm) {
  double acc = 0.0;
  for (const ComplexSignal& s : cm.base) acc += std::norm(s);
  return acc / static_cast<double>(cm.blocks);
}

// Observation noise matched to the reference hardware: its fitted RSS std
// scaled by the ratio of simulated to reference mean power.
inline double calibrated_sigma(const CriticalMeasurements& cm) {
  return 0.1717 / 1.7753 * mean_base_rss(cm);
}

// ---------------------------------------------------------------------------
// Scene fingerprint stored with the measurement file. Not cryptographic; it
// exists to catch a map being replayed against a different deployment.

namespace detail {

inline void hash_feed(std::uint64_t lanes[4], const std::string& text) {
  for (int l = 0; l < 4; ++l) {
    std::uint64_t s = lanes[l];
    for (unsigned char ch : text) {
      s ^= ch + 0x9e3779b97f4a7c15ull + (s << 6) + (s >> 2);
      s = splitmix64(s);
    }
    lanes[l] = s;
  }
}

inline void hash_num(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g,", v);
  out += buf;
}

}  // namespace detail

inline std::array<std::uint8_t, 32> scene_hash32(const Scene& sc, const ChannelParams& p) {
  std::string text = "grid:";
  detail::hash_num(text, sc.grid.origin.x);
  detail::hash_num(text, sc.grid.origin.y);
  detail::hash_num(text, sc.grid.origin.z);
  detail::hash_num(text, sc.grid.edge);
  detail::hash_num(text, sc.grid.nx);
  detail::hash_num(text, sc.grid.ny);
  detail::hash_num(text, sc.grid.nz);
  text += "surface:";
  detail::hash_num(text, sc.surface.center.x);
  detail::hash_num(text, sc.surface.center.y);
  detail::hash_num(text, sc.surface.center.z);
  detail::hash_num(text, sc.surface.normal.x);
  detail::hash_num(text, sc.surface.normal.y);
  detail::hash_num(text, sc.surface.normal.z);
  detail::hash_num(text, sc.surface.rows);
  detail::hash_num(text, sc.surface.cols);
  detail::hash_num(text, sc.surface.pitch);
  text += "emitter:";
  detail::hash_num(text, sc.emitter.position.x);
  detail::hash_num(text, sc.emitter.position.y);
  detail::hash_num(text, sc.emitter.position.z);
  detail::hash_num(text, sc.emitter.carrier_hz);
  detail::hash_num(text, sc.emitter.amplitude.real());
  detail::hash_num(text, sc.emitter.amplitude.imag());
  text += "channel:";
  detail::hash_num(text, p.rho);
  detail::hash_num(text, static_cast<double>(p.multipath_seed & 0xffffffffu));
  detail::hash_num(text, static_cast<double>(p.multipath_seed >> 32));
  detail::hash_num(text, p.per_unit_mode ? p.units_per_side : 0);

  std::uint64_t lanes[4] = {0x6d726131ull, 0x6d726132ull, 0x6d726133ull, 0x6d726134ull};
  detail::hash_feed(lanes, text);
  std::array<std::uint8_t, 32> out{};
  for (int l = 0; l < 4; ++l) {
    for (int b = 0; b < 8; ++b) out[static_cast<size_t>(l * 8 + b)] = static_cast<std::uint8_t>(lanes[l] >> (8 * b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary measurement file.
// Layout: "MRCM", u16 version, u32 elements, u32 blocks, u32 states, base
// signals (f64 re, f64 im per block), deltas in element/state/block order,
// then the 32-byte scene hash. All integers and doubles little-endian.

namespace detail {

inline void put_bytes(std::string& out, std::uint64_t v, int nbytes) {
  for (int i = 0; i < nbytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof bits == sizeof v);
  __builtin_memcpy(&bits, &v, sizeof bits);
  put_bytes(out, bits, 8);
}

struct ByteReader {
  const std::string& data;
  size_t pos = 0;
  std::uint64_t take(int nbytes) {
    if (pos + static_cast<size_t>(nbytes) > data.size()) {
      throw std::runtime_error("measurement file truncated");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data[pos++])) << (8 * i);
    return v;
  }
  double take_f64() {
    std::uint64_t bits = take(8);
    double v;
    __builtin_memcpy(&v, &bits, sizeof v);
    return v;
  }
};

inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline constexpr std::uint16_t kMeasurementFileVersion = 1;

inline void write_critical_measurements(const std::filesystem::path& path, const CriticalMeasurements& cm) {
  validate_measurements(cm);
  std::string bytes;
  bytes.reserve(50 + 16 * (cm.base.size() + cm.deltas.size()));
  bytes += "MRCM";
  detail::put_bytes(bytes, kMeasurementFileVersion, 2);
  detail::put_bytes(bytes, static_cast<std::uint32_t>(cm.elements), 4);
  detail::put_bytes(bytes, static_cast<std::uint32_t>(cm.blocks), 4);
  detail::put_bytes(bytes, static_cast<std::uint32_t>(cm.states), 4);
  for (const ComplexSignal& s : cm.base) {
    detail::put_f64(bytes, s.real());
    detail::put_f64(bytes, s.imag());
  }
  for (const ComplexSignal& s : cm.deltas) {
    detail::put_f64(bytes, s.real());
    detail::put_f64(bytes, s.imag());
  }
  for (std::uint8_t b : cm.scene_hash) bytes.push_back(static_cast<char>(b));
  detail::write_file_atomic(path, bytes);
}

inline CriticalMeasurements read_critical_measurements(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open measurement file " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 4 || data.compare(0, 4, "MRCM") != 0) {
    throw std::runtime_error("not a measurement file (bad magic): " + path.string());
  }
  detail::ByteReader rd{data, 4};
  std::uint16_t version = static_cast<std::uint16_t>(rd.take(2));
  if (version != kMeasurementFileVersion) {
    throw std::runtime_error("unsupported measurement file version " + std::to_string(version));
  }
  CriticalMeasurements cm;
  cm.elements = static_cast<int>(rd.take(4));
  cm.blocks = static_cast<int>(rd.take(4));
  cm.states = static_cast<int>(rd.take(4));
  if (cm.elements < 1 || cm.blocks < 1 || cm.states < 1 || cm.elements > (1 << 20) ||
      cm.blocks > (1 << 26) || cm.states > (1 << 10)) {
    throw std::runtime_error("measurement file header out of range");
  }
  cm.base.resize(static_cast<size_t>(cm.blocks));
  for (auto& s : cm.base) {
    double re = rd.take_f64();
    double im = rd.take_f64();
    s = {re, im};
  }
  cm.deltas.resize(static_cast<size_t>(cm.elements) * (cm.states - 1) * cm.blocks);
  for (auto& s : cm.deltas) {
    double re = rd.take_f64();
    double im = rd.take_f64();
    s = {re, im};
  }
  for (auto& b : cm.scene_hash) b = static_cast<std::uint8_t>(rd.take(1));
  if (rd.pos != data.size()) throw std::runtime_error("trailing bytes in measurement file");
  return cm;
}

}  // namespace metaradar
