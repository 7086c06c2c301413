#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaradar/geometry.hpp"

namespace metaradar {

// ---------------------------------------------------------------------------
// Space of interest: an axis-aligned box of cubic blocks.
// Block n unpacks row-major with axis order x, y, z (z varies fastest):
// n = (i * ny + j) * nz + k.

struct BlockGrid {
  Vec3 origin;         // lower corner of the box
  double edge = 0.05;  // block edge length, meters
  int nx = 0;
  int ny = 0;
  int nz = 0;
};

inline int block_count(const BlockGrid& g) { return g.nx * g.ny * g.nz; }

inline Vec3 grid_min(const BlockGrid& g) { return g.origin; }

inline Vec3 grid_max(const BlockGrid& g) {
  return g.origin + Vec3{g.nx * g.edge, g.ny * g.edge, g.nz * g.edge};
}

inline int block_index(const BlockGrid& g, int i, int j, int k) {
  return (i * g.ny + j) * g.nz + k;
}

inline Vec3 block_center(const BlockGrid& g, int n) {
  if (n < 0 || n >= block_count(g)) throw std::out_of_range("block index out of range");
  int k = n % g.nz;
  int j = (n / g.nz) % g.ny;
  int i = n / (g.ny * g.nz);
  return g.origin + Vec3{(i + 0.5) * g.edge, (j + 0.5) * g.edge, (k + 0.5) * g.edge};
}

namespace detail {

// Points on a shared face belong to the lower-index block.
inline int grid_axis_index(double coord, double origin, double edge, int n, const char* axis) {
  double t = (coord - origin) / edge;
  if (t < 0.0 || t > static_cast<double>(n)) {
    throw std::domain_error(std::string("point outside the space of interest on the ") + axis + " axis");
  }
  int i = static_cast<int>(std::floor(t));
  if (static_cast<double>(i) == t && i > 0) --i;
  if (i >= n) i = n - 1;
  return i;
}

inline int clamped_axis_index(double coord, double origin, double edge, int n) {
  int i = static_cast<int>(std::floor((coord - origin) / edge));
  return std::clamp(i, 0, n - 1);
}

}  // namespace detail

inline int block_index_of(const BlockGrid& g, const Vec3& p) {
  int i = detail::grid_axis_index(p.x, g.origin.x, g.edge, g.nx, "x");
  int j = detail::grid_axis_index(p.y, g.origin.y, g.edge, g.ny, "y");
  int k = detail::grid_axis_index(p.z, g.origin.z, g.edge, g.nz, "z");
  return block_index(g, i, j, k);
}

inline bool inside_grid(const BlockGrid& g, const Vec3& p) {
  Vec3 lo = grid_min(g), hi = grid_max(g);
  return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
}

// Nearest block for positions that may fall outside the box (obstruction
// studies place bodies past the boundary).
inline int nearest_block(const BlockGrid& g, const Vec3& p) {
  int i = detail::clamped_axis_index(p.x, g.origin.x, g.edge, g.nx);
  int j = detail::clamped_axis_index(p.y, g.origin.y, g.edge, g.ny);
  int k = detail::clamped_axis_index(p.z, g.origin.z, g.edge, g.nz);
  return block_index(g, i, j, k);
}

// ---------------------------------------------------------------------------
// Metasurface: rows x cols square elements on a plane.

struct MetasurfaceLayout {
  Vec3 center;
  Vec3 normal{1.0, 0.0, 0.0};
  int rows = 4;
  int cols = 4;
  double pitch = 0.1725;  // element spacing, meters
};

inline int element_count(const MetasurfaceLayout& s) { return s.rows * s.cols; }

// In-plane basis derived from the normal alone so that every caller agrees on
// it. The row axis doubles as the azimuth reference.
inline Vec3 plane_row_axis(const Vec3& normal) {
  Vec3 n = normalized(normal);
  if (std::abs(n.z) < 0.99) return normalized(cross(Vec3{0.0, 0.0, 1.0}, n));
  return normalized(cross(n, Vec3{1.0, 0.0, 0.0}));
}

inline Vec3 plane_col_axis(const Vec3& normal) {
  Vec3 n = normalized(normal);
  return cross(n, plane_row_axis(n));
}

// Element m at (row r, col c) with m = r * cols + c, centered on the layout.
inline Vec3 element_center(const MetasurfaceLayout& s, int m) {
  if (m < 0 || m >= element_count(s)) throw std::out_of_range("element index out of range");
  int r = m / s.cols;
  int c = m % s.cols;
  Vec3 u = plane_row_axis(s.normal);
  Vec3 v = plane_col_axis(s.normal);
  double du = (c - 0.5 * (s.cols - 1)) * s.pitch;
  double dv = (r - 0.5 * (s.rows - 1)) * s.pitch;
  return s.center + du * u + dv * v;
}

inline std::vector<Vec3> element_centers(const MetasurfaceLayout& s) {
  std::vector<Vec3> out;
  out.reserve(element_count(s));
  for (int m = 0; m < element_count(s); ++m) out.push_back(element_center(s, m));
  return out;
}

// ---------------------------------------------------------------------------
// Direction angles relative to a surface normal.
// polar in [0, 180] measured from the normal; azimuth in [0, 360) measured in
// the surface plane from the row axis. A direction along the normal has
// azimuth 0 by convention.

struct DirectionAngles {
  double polar_deg = 0.0;
  double azimuth_deg = 0.0;
};

inline DirectionAngles direction_angles(const Vec3& from, const Vec3& to, const Vec3& normal) {
  Vec3 d = to - from;
  double len = norm(d);
  if (len == 0.0) throw std::domain_error("direction undefined for coincident points");
  Vec3 n = normalized(normal);
  double c = dot(d, n) / len;
  double polar = rad2deg(std::acos(std::clamp(c, -1.0, 1.0)));
  Vec3 u = plane_row_axis(n);
  Vec3 v = plane_col_axis(n);
  double cu = dot(d, u);
  double cv = dot(d, v);
  double az = 0.0;
  if (std::abs(cu) > 1e-15 * len || std::abs(cv) > 1e-15 * len) {
    az = rad2deg(std::atan2(cv, cu));
    if (az < 0.0) az += 360.0;
    if (az >= 360.0) az = 0.0;
  }
  return {polar, az};
}

// ---------------------------------------------------------------------------
// Emitter and user bodies.

struct Emitter {
  Vec3 position;
  double carrier_hz = 3.2e9;
  std::complex<double> amplitude{1.0, 0.0};  // transmit amplitude, sqrt-watts
};

inline double wavelength(const Emitter& e) {
  if (e.carrier_hz <= 0.0) throw std::domain_error("carrier frequency must be positive");
  return kSpeedOfLight / e.carrier_hz;
}

struct UserBody {
  Vec3 position;
  int block = -1;                 // containing block; nearest block if outside the box
  double occlusion_radius = 0.15; // meters
};

// True iff the open segment (a, b) passes within the body's occlusion radius.
// A body sitting exactly on an endpoint never blocks its own link.
inline bool segment_blocked(const Vec3& a, const Vec3& b, const UserBody& body) {
  if (body.position == a || body.position == b) return false;
  Vec3 d = b - a;
  double len2 = dot(d, d);
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(dot(body.position - a, d) / len2, 0.0, 1.0);
  return distance(a + t * d, body.position) < body.occlusion_radius;
}

// ---------------------------------------------------------------------------
// Scene.

struct Scene {
  BlockGrid grid;
  MetasurfaceLayout surface;
  Emitter emitter;
  std::vector<UserBody> users;
};

inline double plane_offset(const MetasurfaceLayout& s, const Vec3& p) {
  return dot(p - s.center, normalized(s.normal));
}

// Scene-level invariants: a well-formed grid and surface, the box strictly on
// one side of the surface plane, and every declared user inside the box.
inline void validate_scene(const Scene& sc) {
  const BlockGrid& g = sc.grid;
  if (g.nx < 1 || g.ny < 1 || g.nz < 1) throw std::invalid_argument("grid dims must be at least 1");
  if (!(g.edge > 0.0) || !std::isfinite(g.edge)) throw std::invalid_argument("grid edge must be positive");
  if (!is_finite(g.origin)) throw std::invalid_argument("grid origin must be finite");
  const MetasurfaceLayout& s = sc.surface;
  if (s.rows < 1 || s.cols < 1) throw std::invalid_argument("surface must have at least one element");
  if (!(s.pitch > 0.0)) throw std::invalid_argument("element pitch must be positive");
  if (norm(s.normal) == 0.0) throw std::invalid_argument("surface normal must be nonzero");
  if (sc.emitter.carrier_hz <= 0.0) throw std::invalid_argument("carrier frequency must be positive");
  if (!is_finite(sc.emitter.position)) throw std::invalid_argument("emitter position must be finite");

  Vec3 lo = grid_min(g), hi = grid_max(g);
  bool pos = false, neg = false;
  for (int corner = 0; corner < 8; ++corner) {
    Vec3 p{(corner & 1) ? hi.x : lo.x, (corner & 2) ? hi.y : lo.y, (corner & 4) ? hi.z : lo.z};
    double off = plane_offset(s, p);
    if (off >= 0.0) pos = true;
    if (off <= 0.0) neg = true;
  }
  if (pos && neg) throw std::invalid_argument("space of interest intersects the metasurface plane");

  for (int m = 0; m < element_count(s); ++m) {
    if (distance(sc.emitter.position, element_center(s, m)) == 0.0) {
      throw std::invalid_argument("emitter coincides with a surface element");
    }
  }
  for (const UserBody& u : sc.users) {
    if (u.occlusion_radius < 0.0) throw std::invalid_argument("occlusion radius must be nonnegative");
    if (!inside_grid(g, u.position)) throw std::invalid_argument("user position outside the space of interest");
  }
}

// Fills each user's containing block. Call after validate_scene.
inline void assign_user_blocks(Scene& sc) {
  for (UserBody& u : sc.users) {
    u.block = inside_grid(sc.grid, u.position) ? block_index_of(sc.grid, u.position)
                                               : nearest_block(sc.grid, u.position);
  }
}

// Reference deployment: a 0.5 m cube of 5 cm blocks centered d meters in
// front of a 4x4 surface at the origin, emitter one meter away at a 60 degree
// polar / 90 degree azimuth offset from the surface normal.
inline Scene default_scene(double d) {
  if (!(d >= 0.5)) throw std::invalid_argument("surface-to-region distance must be at least 0.5 m");
  Scene sc;
  sc.grid.origin = Vec3{d - 0.25, -0.25, -0.25};
  sc.grid.edge = 0.05;
  sc.grid.nx = sc.grid.ny = sc.grid.nz = 10;
  sc.surface = MetasurfaceLayout{};
  double polar = deg2rad(60.0), azimuth = deg2rad(90.0);
  Vec3 u = plane_row_axis(sc.surface.normal);
  Vec3 v = plane_col_axis(sc.surface.normal);
  sc.emitter.position = sc.surface.center + std::cos(polar) * normalized(sc.surface.normal) +
                        (std::sin(polar) * std::cos(azimuth)) * u +
                        (std::sin(polar) * std::sin(azimuth)) * v;
  sc.emitter.carrier_hz = 3.2e9;
  sc.emitter.amplitude = {1.0, 0.0};
  validate_scene(sc);
  return sc;
}

}  // namespace metaradar
