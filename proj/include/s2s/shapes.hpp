#pragma once

// Synthetic labeled primitives (sphere, box, cylinder, cone, torus) with
// per-point part labels. Points are sampled uniformly by surface area and
// optionally jittered along the surface normal by a clamped Gaussian, so
// every point stays within 3 sigma of the ideal surface.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "s2s/geometry.hpp"
#include "s2s/rng.hpp"

namespace s2s::bench {

enum class ShapeKind { sphere, box, cylinder, cone, torus };

inline const char* kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::box: return "box";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::cone: return "cone";
    default: return "torus";
  }
}

inline ShapeKind parse_kind(const std::string& s) {
  for (ShapeKind k : {ShapeKind::sphere, ShapeKind::box, ShapeKind::cylinder, ShapeKind::cone,
                      ShapeKind::torus}) {
    if (s == kind_name(k)) return k;
  }
  throw ConfigError("unknown shape kind '" + s + "'");
}

// Part label sets:
//   sphere   2: upper / lower hemisphere
//   box      3: the three axis-aligned face pairs
//   cylinder 3: side, top cap, bottom cap
//   cone     2: lateral surface, base disk
//   torus    2: outer half, inner half
inline int64_t part_count(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return 2;
    case ShapeKind::box: return 3;
    case ShapeKind::cylinder: return 3;
    case ShapeKind::cone: return 2;
    default: return 2;
  }
}

struct SyntheticShapeSpec {
  ShapeKind kind = ShapeKind::sphere;
  double jitter_sigma = 0.01;
  double size_min = 0.6;  // size parameters are drawn uniformly in this range
  double size_max = 1.2;
};

struct LabeledShape {
  geom::PointCloud cloud;
  int64_t class_id = 0;
  std::vector<uint16_t> part_labels;
};

namespace detail {

inline double clamped_normal(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  double v = rng.normal(0.0, sigma);
  return std::clamp(v, -3.0 * sigma, 3.0 * sigma);
}

struct SurfacePoint {
  geom::Vec3 pos;
  geom::Vec3 normal;
  uint16_t part;
};

inline SurfacePoint sample_sphere(double r, Rng& rng) {
  geom::Vec3 v{rng.normal(), rng.normal(), rng.normal()};
  double n = v.norm();
  if (n == 0.0) v = {1, 0, 0}, n = 1.0;
  geom::Vec3 dir = v * (1.0 / n);
  return {dir * r, dir, static_cast<uint16_t>(dir.z >= 0.0 ? 0 : 1)};
}

inline SurfacePoint sample_box(double hx, double hy, double hz, Rng& rng) {
  double ax = hy * hz, ay = hx * hz, az = hx * hy;
  double pick = rng.uniform(0.0, ax + ay + az);
  int axis = pick < ax ? 0 : (pick < ax + ay ? 1 : 2);
  double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
  SurfacePoint p;
  p.part = static_cast<uint16_t>(axis);
  if (axis == 0) {
    p.pos = {sign * hx, u * hy, v * hz};
    p.normal = {sign, 0, 0};
  } else if (axis == 1) {
    p.pos = {u * hx, sign * hy, v * hz};
    p.normal = {0, sign, 0};
  } else {
    p.pos = {u * hx, v * hy, sign * hz};
    p.normal = {0, 0, sign};
  }
  return p;
}

inline SurfacePoint sample_cylinder(double r, double hh, Rng& rng) {
  double side = 2.0 * std::numbers::pi * r * 2.0 * hh;
  double cap = std::numbers::pi * r * r;
  double pick = rng.uniform(0.0, side + 2.0 * cap);
  SurfacePoint p;
  if (pick < side) {
    double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double z = rng.uniform(-hh, hh);
    p.pos = {r * std::cos(a), r * std::sin(a), z};
    p.normal = {std::cos(a), std::sin(a), 0};
    p.part = 0;
  } else {
    double sign = pick < side + cap ? 1.0 : -1.0;
    double rad = r * std::sqrt(rng.uniform());
    double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    p.pos = {rad * std::cos(a), rad * std::sin(a), sign * hh};
    p.normal = {0, 0, sign};
    p.part = sign > 0 ? 1 : 2;
  }
  return p;
}

inline SurfacePoint sample_cone(double r, double h, Rng& rng) {
  double slant = std::sqrt(r * r + h * h);
  double lateral = std::numbers::pi * r * slant;
  double base = std::numbers::pi * r * r;
  double pick = rng.uniform(0.0, lateral + base);
  SurfacePoint p;
  if (pick < lateral) {
    // area element grows linearly with distance from the apex
    double d = std::sqrt(rng.uniform());
    double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double rad = r * d;
    p.pos = {rad * std::cos(a), rad * std::sin(a), h * (1.0 - d)};
    geom::Vec3 n{h * std::cos(a), h * std::sin(a), r};
    p.normal = n * (1.0 / n.norm());
    p.part = 0;
  } else {
    double rad = r * std::sqrt(rng.uniform());
    double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    p.pos = {rad * std::cos(a), rad * std::sin(a), 0.0};
    p.normal = {0, 0, -1};
    p.part = 1;
  }
  return p;
}

inline SurfacePoint sample_torus(double big_r, double small_r, Rng& rng) {
  // rejection keeps the sampling uniform in area over the tube angle
  double u, v;
  while (true) {
    u = rng.uniform(0.0, 2.0 * std::numbers::pi);
    v = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double w = (big_r + small_r * std::cos(v)) / (big_r + small_r);
    if (rng.uniform() <= w) break;
  }
  SurfacePoint p;
  geom::Vec3 ring{std::cos(u), std::sin(u), 0};
  p.normal = {std::cos(v) * ring.x, std::cos(v) * ring.y, std::sin(v)};
  p.pos = ring * big_r + p.normal * small_r;
  p.part = static_cast<uint16_t>(std::cos(v) >= 0.0 ? 0 : 1);
  return p;
}

}  // namespace detail

inline LabeledShape sample_shape(const SyntheticShapeSpec& spec, int64_t n_points, Rng& rng) {
  if (n_points < part_count(spec.kind))
    throw Error("sample_shape: need at least one point per part");
  auto draw_size = [&] { return rng.uniform(spec.size_min, spec.size_max); };

  LabeledShape out;
  out.cloud.positions.reserve(static_cast<size_t>(n_points));
  out.part_labels.reserve(static_cast<size_t>(n_points));

  // per-shape size parameters
  double s1 = draw_size(), s2 = draw_size(), s3 = draw_size();
  auto draw = [&](Rng& r) -> detail::SurfacePoint {
    switch (spec.kind) {
      case ShapeKind::sphere: return detail::sample_sphere(s1, r);
      case ShapeKind::box: return detail::sample_box(s1 * 0.8, s2 * 0.8, s3 * 0.8, r);
      case ShapeKind::cylinder: return detail::sample_cylinder(s1 * 0.6, s2 * 0.9, r);
      case ShapeKind::cone: return detail::sample_cone(s1 * 0.8, s2 * 1.4, r);
      default: return detail::sample_torus(s1 * 0.8, s1 * 0.8 * std::clamp(s2 * 0.35, 0.15, 0.45), r);
    }
  };

  std::vector<int64_t> per_part(static_cast<size_t>(part_count(spec.kind)), 0);
  for (int64_t i = 0; i < n_points; ++i) {
    detail::SurfacePoint sp = draw(rng);
    sp.pos = sp.pos + sp.normal * detail::clamped_normal(rng, spec.jitter_sigma);
    out.cloud.positions.push_back(sp.pos);
    out.part_labels.push_back(sp.part);
    per_part[sp.part]++;
  }
  // guarantee every part in the label set appears: redraw surplus points
  // onto missing parts (deterministic, bounded retries per point)
  for (uint16_t part = 0; part < part_count(spec.kind); ++part) {
    if (per_part[part] > 0) continue;
    for (int64_t i = 0; i < n_points; ++i) {
      if (per_part[out.part_labels[static_cast<size_t>(i)]] < 2) continue;
      detail::SurfacePoint sp{};
      bool found = false;
      for (int tries = 0; tries < 10000; ++tries) {
        sp = draw(rng);
        if (sp.part == part) {
          found = true;
          break;
        }
      }
      if (!found) throw Error("sample_shape: could not realize part " + std::to_string(part));
      sp.pos = sp.pos + sp.normal * detail::clamped_normal(rng, spec.jitter_sigma);
      per_part[out.part_labels[static_cast<size_t>(i)]]--;
      out.cloud.positions[static_cast<size_t>(i)] = sp.pos;
      out.part_labels[static_cast<size_t>(i)] = part;
      per_part[part]++;
      break;
    }
  }
  return out;
}

}  // namespace s2s::bench
