#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "mgse/core.hpp"
#include "mgse/rng.hpp"

namespace mgse {

struct FreeSpace {
  friend bool operator==(const FreeSpace&, const FreeSpace&) = default;
};

/// Region 0 <= r[normal] <= width; unbounded along the other two axes.
struct Slab {
  double width = 0;
  Axis normal = Axis::z;
  friend bool operator==(const Slab&, const Slab&) = default;
};

/// Infinite cylinder of the given radius around the coordinate axis `axis`.
struct Cylinder {
  double radius = 0;
  Axis axis = Axis::z;
  friend bool operator==(const Cylinder&, const Cylinder&) = default;
};

/// Ball centred at the origin.
struct Sphere {
  double radius = 0;
  friend bool operator==(const Sphere&, const Sphere&) = default;
};

/// Simple-cubic lattice of large cages at n*period, small cages at the edge
/// midpoints, and cylindrical windows along every lattice line joining them.
struct CageLattice {
  double small_cage_diameter = 0;
  double large_cage_diameter = 0;
  double window_diameter = 0;
  double period = 0;
  friend bool operator==(const CageLattice&, const CageLattice&) = default;
};

using SiteGeometry = std::variant<FreeSpace, Slab, Cylinder, Sphere, CageLattice>;

/// Two environments with Markov exchange. `jump_rate` is the relaxation rate
/// of the two-state chain: site s is left with rate jump_rate * weights[1-s],
/// which keeps `weights` stationary.
struct TwoSite {
  std::array<SiteGeometry, 2> sites{};
  double jump_rate = 0;
  std::array<double, 2> weights{0.5, 0.5};
  friend bool operator==(const TwoSite&, const TwoSite&) = default;
};

using Geometry = std::variant<FreeSpace, Slab, Cylinder, Sphere, CageLattice, TwoSite>;

inline SiteGeometry as_site(const Geometry& g) {
  return std::visit(
      [](const auto& v) -> SiteGeometry {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, TwoSite>) {
          fail(ErrorCode::invalid_argument, "TwoSite geometry has no single site");
        } else {
          return v;
        }
      },
      g);
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline std::string tag(const SiteGeometry& g) {
  return std::visit(overloaded{
                        [](const FreeSpace&) -> std::string { return "free"; },
                        [](const Slab&) -> std::string { return "slab"; },
                        [](const Cylinder&) -> std::string { return "cylinder"; },
                        [](const Sphere&) -> std::string { return "sphere"; },
                        [](const CageLattice&) -> std::string { return "cage_lattice"; },
                    },
                    g);
}

inline std::string tag(const Geometry& g) {
  if (const auto* ts = std::get_if<TwoSite>(&g)) return "two_site(" + tag(ts->sites[0]) + "," + tag(ts->sites[1]) + ")";
  return tag(as_site(g));
}

namespace detail {

inline void site_violations(const SiteGeometry& g, const std::string& prefix, std::vector<std::string>& out) {
  std::visit(overloaded{
                 [](const FreeSpace&) {},
                 [&](const Slab& s) {
                   if (!(s.width > 0)) out.push_back(prefix + "slab width must be positive");
                 },
                 [&](const Cylinder& c) {
                   if (!(c.radius > 0)) out.push_back(prefix + "cylinder radius must be positive");
                 },
                 [&](const Sphere& s) {
                   if (!(s.radius > 0)) out.push_back(prefix + "sphere radius must be positive");
                 },
                 [&](const CageLattice& c) {
                   if (!(c.small_cage_diameter > 0)) out.push_back(prefix + "small cage diameter must be positive");
                   if (!(c.large_cage_diameter > 0)) out.push_back(prefix + "large cage diameter must be positive");
                   if (!(c.window_diameter > 0)) out.push_back(prefix + "window diameter must be positive");
                   if (!(c.period > 0)) out.push_back(prefix + "lattice period must be positive");
                   if (c.window_diameter > c.small_cage_diameter || c.window_diameter > c.large_cage_diameter)
                     out.push_back(prefix + "window diameter must not exceed either cage diameter");
                   if (c.large_cage_diameter >= c.period || c.small_cage_diameter >= c.period)
                     out.push_back(prefix + "cage diameters must be smaller than the lattice period");
                 },
             },
             g);
}

}  // namespace detail

/// All invariant violations, empty when the geometry is valid.
inline std::vector<std::string> violations(const Geometry& g) {
  std::vector<std::string> out;
  if (const auto* ts = std::get_if<TwoSite>(&g)) {
    detail::site_violations(ts->sites[0], "site 0: ", out);
    detail::site_violations(ts->sites[1], "site 1: ", out);
    if (!(ts->jump_rate >= 0)) out.push_back("two-site jump rate must be non-negative");
    if (!(ts->weights[0] >= 0 && ts->weights[1] >= 0) || std::abs(ts->weights[0] + ts->weights[1] - 1.0) > 1e-9)
      out.push_back("two-site weights must be non-negative and sum to 1");
  } else {
    detail::site_violations(as_site(g), "", out);
  }
  return out;
}

inline void validate(const Geometry& g) {
  auto v = violations(g);
  if (!v.empty()) {
    std::string msg = "invalid geometry:";
    for (auto& s : v) msg += " " + s + ";";
    fail(ErrorCode::validation_error, msg);
  }
}

/// Smallest confinement length; the random-walk step guard is relative to it.
inline double confinement_length(const SiteGeometry& g) {
  return std::visit(overloaded{
                        [](const FreeSpace&) { return infinity; },
                        [](const Slab& s) { return s.width; },
                        [](const Cylinder& c) { return c.radius; },
                        [](const Sphere& s) { return s.radius; },
                        [](const CageLattice& c) { return 0.5 * c.window_diameter; },
                    },
                    g);
}

inline double confinement_length(const Geometry& g) {
  if (const auto* ts = std::get_if<TwoSite>(&g))
    return std::min(confinement_length(ts->sites[0]), confinement_length(ts->sites[1]));
  return confinement_length(as_site(g));
}

/// True when each coordinate evolves independently (reflection acts per axis).
inline bool axis_separable(const SiteGeometry& g) {
  return std::holds_alternative<FreeSpace>(g) || std::holds_alternative<Slab>(g);
}

namespace detail {

inline double cross_radius2(const Vec3& r, Axis axis) {
  const int a = index(axis);
  double s = 0;
  for (int i = 0; i < 3; ++i)
    if (i != a) s += r[i] * r[i];
  return s;
}

// Coordinates relative to the nearest lattice point.
inline Vec3 reduce_cell(const Vec3& r, double period) {
  Vec3 u;
  for (int i = 0; i < 3; ++i) u[i] = r[i] - period * std::floor(r[i] / period + 0.5);
  return u;
}

// Components of the cage lattice around the reduced point: 0 large cage,
// 1..3 small cage on axis i-1, 4..6 window along axis i-4. Returns the
// signed clearance (positive inside) of component `c`.
inline double cage_clearance(const CageLattice& g, const Vec3& u, int c) {
  if (c == 0) return 0.5 * g.large_cage_diameter - norm(u);
  if (c <= 3) {
    const int ax = c - 1;
    Vec3 centre{0, 0, 0};
    centre[ax] = std::copysign(0.5 * g.period, u[ax]);
    return 0.5 * g.small_cage_diameter - norm(u - centre);
  }
  const int ax = c - 4;
  return 0.5 * g.window_diameter - std::sqrt(cross_radius2(u, static_cast<Axis>(ax)));
}

inline bool cage_contains(const CageLattice& g, const Vec3& r) {
  const Vec3 u = reduce_cell(r, g.period);
  for (int c = 0; c < 7; ++c)
    if (cage_clearance(g, u, c) >= 0) return true;
  return false;
}

inline Vec3 cage_normal(const CageLattice& g, const Vec3& r, int c) {
  const Vec3 u = reduce_cell(r, g.period);
  Vec3 d;
  if (c == 0) {
    d = u;
  } else if (c <= 3) {
    const int ax = c - 1;
    Vec3 centre{0, 0, 0};
    centre[ax] = std::copysign(0.5 * g.period, u[ax]);
    d = u - centre;
  } else {
    d = u;
    d[c - 4] = 0;
  }
  const double n = norm(d);
  if (n == 0) return {0, 0, 0};
  return (1.0 / n) * d;
}

// Reflect `delta` specularly inside a centred ball (dims = all axes) or disc
// (dims = cross-section of a cylinder). `mask` selects the bounded axes.
inline Vec3 reflect_round(Vec3 p, Vec3 delta, double radius, const std::array<bool, 3>& mask) {
  const double r2 = radius * radius;
  auto proj2 = [&](const Vec3& v) {
    double s = 0;
    for (int i = 0; i < 3; ++i)
      if (mask[i]) s += v[i] * v[i];
    return s;
  };
  auto pdot = [&](const Vec3& a, const Vec3& b) {
    double s = 0;
    for (int i = 0; i < 3; ++i)
      if (mask[i]) s += a[i] * b[i];
    return s;
  };
  for (int bounce = 0; bounce < 64; ++bounce) {
    const Vec3 q = p + delta;
    if (proj2(q) <= r2) return q;
    const double a = proj2(delta);
    const double b = 2 * pdot(p, delta);
    const double c = proj2(p) - r2;
    const double disc = std::max(0.0, b * b - 4 * a * c);
    const double t = std::clamp((-b + std::sqrt(disc)) / (2 * a), 0.0, 1.0);
    Vec3 hit = p + t * delta;
    Vec3 n{0, 0, 0};
    const double hn = std::sqrt(proj2(hit));
    for (int i = 0; i < 3; ++i)
      if (mask[i]) n[i] = hit[i] / hn;
    Vec3 rest = (1 - t) * delta;
    const double rn = dot(rest, n);
    delta = rest - (2 * rn) * n;
    p = hit;
  }
  // Pathological grazing sequence: stay on the last boundary point, pulled in.
  const double pr = std::sqrt(proj2(p));
  if (pr > radius)
    for (int i = 0; i < 3; ++i)
      if (mask[i]) p[i] *= radius / pr;
  return p;
}

inline Vec3 reflect_cage(const CageLattice& g, Vec3 p, Vec3 delta) {
  const double eps = 1e-9 * g.window_diameter;
  for (int bounce = 0; bounce < 32; ++bounce) {
    double t_in = 0, t_out = -1;
    constexpr int samples = 8;
    for (int s = 1; s <= samples; ++s) {
      const double t = double(s) / samples;
      if (!cage_contains(g, p + t * delta)) {
        t_out = t;
        break;
      }
      t_in = t;
    }
    if (t_out < 0) return p + delta;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (t_in + t_out);
      if (cage_contains(g, p + mid * delta))
        t_in = mid;
      else
        t_out = mid;
    }
    const Vec3 inside = p + t_in * delta;
    const Vec3 u = reduce_cell(inside, g.period);
    int comp = -1;
    double best = infinity;
    for (int c = 0; c < 7; ++c) {
      const double cl = cage_clearance(g, u, c);
      if (cl >= 0 && cl < best) {
        best = cl;
        comp = c;
      }
    }
    if (comp < 0) return p;
    const Vec3 n = cage_normal(g, inside, comp);
    const Vec3 rest = (1 - t_in) * delta;
    delta = rest - (2 * dot(rest, n)) * n;
    p = inside - eps * n;
    if (!cage_contains(g, p)) p = inside;
  }
  return p;
}

}  // namespace detail

inline bool contains(const SiteGeometry& g, const Vec3& r) {
  return std::visit(overloaded{
                        [](const FreeSpace&) { return true; },
                        [&](const Slab& s) {
                          const double x = r[index(s.normal)];
                          return x >= 0 && x <= s.width;
                        },
                        [&](const Cylinder& c) {
                          return detail::cross_radius2(r, c.axis) <= c.radius * c.radius * (1 + 1e-12);
                        },
                        [&](const Sphere& s) { return dot(r, r) <= s.radius * s.radius * (1 + 1e-12); },
                        [&](const CageLattice& c) { return detail::cage_contains(c, r); },
                    },
                    g);
}

/// Specular reflection of one coordinate of an axis-separable geometry.
inline double fold_axis(const SiteGeometry& g, int axis, double x) {
  if (const auto* s = std::get_if<Slab>(&g)) {
    if (axis != index(s->normal)) return x;
    const double a = s->width;
    for (int bounce = 0; bounce < 64 && (x < 0 || x > a); ++bounce) x = x < 0 ? -x : 2 * a - x;
    return std::clamp(x, 0.0, a);
  }
  return x;
}

/// Move from `p` by `delta`, reflecting specularly off every wall hit.
inline Vec3 displace(const SiteGeometry& g, const Vec3& p, const Vec3& delta) {
  return std::visit(overloaded{
                        [&](const FreeSpace&) { return p + delta; },
                        [&](const Slab&) {
                          Vec3 q = p + delta;
                          for (int i = 0; i < 3; ++i) q[i] = fold_axis(g, i, q[i]);
                          return q;
                        },
                        [&](const Cylinder& c) {
                          std::array<bool, 3> mask{true, true, true};
                          mask[index(c.axis)] = false;
                          return detail::reflect_round(p, delta, c.radius, mask);
                        },
                        [&](const Sphere& s) { return detail::reflect_round(p, delta, s.radius, {true, true, true}); },
                        [&](const CageLattice& c) { return detail::reflect_cage(c, p, delta); },
                    },
                    g);
}

/// Uniform draw over the accessible volume. Unbounded coordinates start at 0;
/// the cage lattice is sampled within the unit cell around the origin.
inline Vec3 sample_uniform(const SiteGeometry& g, Engine& e) {
  return std::visit(overloaded{
                        [](const FreeSpace&) { return Vec3{0, 0, 0}; },
                        [&](const Slab& s) {
                          Vec3 r{0, 0, 0};
                          r[index(s.normal)] = s.width * rng::uniform(e);
                          return r;
                        },
                        [&](const Cylinder& c) {
                          const int ax = index(c.axis);
                          for (;;) {
                            Vec3 r{0, 0, 0};
                            for (int i = 0; i < 3; ++i)
                              if (i != ax) r[i] = c.radius * (2 * rng::uniform(e) - 1);
                            if (detail::cross_radius2(r, c.axis) <= c.radius * c.radius) return r;
                          }
                        },
                        [&](const Sphere& s) {
                          for (;;) {
                            Vec3 r;
                            for (auto& x : r) x = s.radius * (2 * rng::uniform(e) - 1);
                            if (dot(r, r) <= s.radius * s.radius) return r;
                          }
                        },
                        [&](const CageLattice& c) {
                          for (;;) {
                            Vec3 r;
                            for (auto& x : r) x = c.period * (rng::uniform(e) - 0.5);
                            if (detail::cage_contains(c, r)) return r;
                          }
                        },
                    },
                    g);
}

/// Position after a site jump: bounded coordinates are redrawn uniformly in
/// the destination, unbounded ones are kept.
inline Vec3 redraw(const SiteGeometry& dest, const Vec3& current, Engine& e) {
  Vec3 r = sample_uniform(dest, e);
  std::visit(overloaded{
                 [&](const FreeSpace&) { r = current; },
                 [&](const Slab& s) {
                   for (int i = 0; i < 3; ++i)
                     if (i != index(s.normal)) r[i] = current[i];
                 },
                 [&](const Cylinder& c) { r[index(c.axis)] = current[index(c.axis)]; },
                 [](const Sphere&) {},
                 [](const CageLattice&) {},
             },
             dest);
  return r;
}

}  // namespace mgse
