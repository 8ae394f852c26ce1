#pragma once

// Point-set kernels: resampling, unit-sphere normalization, farthest-point
// sampling, kNN grouping, nearest-neighbor feature interpolation, and
// similarity transforms. All tie-breaks compare positions lexicographically
// so results do not depend on input index order.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"

namespace s2s::geom {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm2() const { return dot(*this); }
  double norm() const { return std::sqrt(norm2()); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline bool lex_less(const Vec3& a, const Vec3& b) {
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  return a.z < b.z;
}

struct PointCloud {
  std::vector<Vec3> positions;
  int64_t aux_dim = 0;
  std::vector<double> aux;          // row-major positions.size() x aux_dim
  std::optional<ad::Tensor> features;

  int64_t size() const { return static_cast<int64_t>(positions.size()); }

  void validate() const {
    if (positions.empty()) throw Error("PointCloud: empty");
    for (const Vec3& p : positions)
      if (!p.finite()) throw Error("PointCloud: non-finite coordinate");
    if (aux_dim > 0 && static_cast<int64_t>(aux.size()) != size() * aux_dim)
      throw ShapeError("PointCloud: aux rows do not match point count");
  }
};

struct Mat3 {
  // row-major
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }

  Vec3 apply(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 mul(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m[static_cast<size_t>(i * 3 + k)] * o.m[static_cast<size_t>(k * 3 + j)];
        r.m[static_cast<size_t>(i * 3 + j)] = s;
      }
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[static_cast<size_t>(i * 3 + j)] = m[static_cast<size_t>(j * 3 + i)];
    return r;
  }

  static Mat3 rot_x(double a) {
    Mat3 r;
    double c = std::cos(a), s = std::sin(a);
    r.m = {1, 0, 0, 0, c, -s, 0, s, c};
    return r;
  }
  static Mat3 rot_y(double a) {
    Mat3 r;
    double c = std::cos(a), s = std::sin(a);
    r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
    return r;
  }
  static Mat3 rot_z(double a) {
    Mat3 r;
    double c = std::cos(a), s = std::sin(a);
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
  }
};

// p -> scale * R * p + t, with R orthonormal and scale > 0.
struct SimilarityTransform {
  Mat3 rotation;
  Vec3 translation;
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return rotation.apply(p) * scale + translation; }

  SimilarityTransform invert() const {
    SimilarityTransform inv;
    inv.rotation = rotation.transposed();
    inv.scale = 1.0 / scale;
    Vec3 rt = inv.rotation.apply(translation);
    inv.translation = rt * (-inv.scale);
    return inv;
  }

  // Orthonormality / determinant / scale sanity, used by tests.
  bool valid(double tol = 1e-9) const {
    Mat3 rtr = rotation.transposed().mul(rotation);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double want = i == j ? 1.0 : 0.0;
        if (std::abs(rtr.m[static_cast<size_t>(i * 3 + j)] - want) > tol) return false;
      }
    const auto& m = rotation.m;
    double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                 m[2] * (m[3] * m[7] - m[4] * m[6]);
    return std::abs(det - 1.0) <= tol && scale > 0.0;
  }
};

inline std::vector<Vec3> apply_transform(const SimilarityTransform& t,
                                         const std::vector<Vec3>& positions) {
  std::vector<Vec3> out(positions.size());
  for (size_t i = 0; i < positions.size(); ++i) out[i] = t.apply(positions[i]);
  return out;
}

struct TransformConfig {
  double zrot_max = 2.0 * std::numbers::pi;  // uniform angle about z in [0, zrot_max)
  double tilt = 0.1;                         // x/y perturbation, uniform in [-tilt, tilt] rad
  double shift = 0.5;                        // translation, uniform per axis in [-shift, shift]
  double scale_min = 0.8;
  double scale_max = 1.25;

  void validate() const {
    if (scale_min <= 0.0 || scale_max < scale_min)
      throw ConfigError("TransformConfig: scale range must be positive and ordered");
    if (zrot_max < 0.0 || tilt < 0.0 || shift < 0.0)
      throw ConfigError("TransformConfig: ranges must be non-negative");
  }
};

// Draw order is fixed (z angle, x tilt, y tilt, shift xyz, scale) so a seeded
// generator reproduces the same transform everywhere.
inline SimilarityTransform random_transform(const TransformConfig& cfg, Rng& rng) {
  cfg.validate();
  double az = cfg.zrot_max > 0.0 ? rng.uniform(0.0, cfg.zrot_max) : 0.0;
  double ax = cfg.tilt > 0.0 ? rng.uniform(-cfg.tilt, cfg.tilt) : 0.0;
  double ay = cfg.tilt > 0.0 ? rng.uniform(-cfg.tilt, cfg.tilt) : 0.0;
  SimilarityTransform t;
  t.rotation = Mat3::rot_z(az).mul(Mat3::rot_x(ax)).mul(Mat3::rot_y(ay));
  if (cfg.shift > 0.0) {
    t.translation = {rng.uniform(-cfg.shift, cfg.shift), rng.uniform(-cfg.shift, cfg.shift),
                     rng.uniform(-cfg.shift, cfg.shift)};
  }
  t.scale = cfg.scale_max > cfg.scale_min ? rng.uniform(cfg.scale_min, cfg.scale_max) : cfg.scale_min;
  return t;
}

// n points without replacement when the cloud is large enough, with
// replacement otherwise. Aux channels follow their points.
inline PointCloud resample(const PointCloud& cloud, int64_t n, Rng& rng) {
  if (n < 1) throw Error("resample: n must be >= 1");
  cloud.validate();
  const int64_t N = cloud.size();
  std::vector<int64_t> pick;
  if (N >= n) {
    pick = rng.sample_without_replacement(N, n);
  } else {
    pick.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pick[static_cast<size_t>(i)] = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(N)));
  }
  PointCloud out;
  out.positions.reserve(static_cast<size_t>(n));
  out.aux_dim = cloud.aux_dim;
  if (cloud.aux_dim > 0) out.aux.reserve(static_cast<size_t>(n * cloud.aux_dim));
  for (int64_t i : pick) {
    out.positions.push_back(cloud.positions[static_cast<size_t>(i)]);
    for (int64_t a = 0; a < cloud.aux_dim; ++a)
      out.aux.push_back(cloud.aux[static_cast<size_t>(i * cloud.aux_dim + a)]);
  }
  return out;
}

// Subtract the centroid, then divide by the max point norm. The farthest
// point lands exactly on the unit sphere; an all-coincident cloud collapses
// to the origin.
inline PointCloud normalize_unit_sphere(PointCloud cloud) {
  cloud.validate();
  Vec3 c{};
  for (const Vec3& p : cloud.positions) c = c + p;
  c = c * (1.0 / static_cast<double>(cloud.size()));
  double r = 0.0;
  for (Vec3& p : cloud.positions) {
    p = p - c;
    r = std::max(r, p.norm());
  }
  if (r > 0.0) {
    for (Vec3& p : cloud.positions) p = p * (1.0 / r);
  }
  return cloud;
}

namespace detail {

// (distance^2, position, index) with the project-wide tie rule.
inline bool nearer(double d2a, const Vec3& pa, int64_t ia, double d2b, const Vec3& pb, int64_t ib) {
  if (d2a != d2b) return d2a < d2b;
  if (pa.x != pb.x || pa.y != pb.y || pa.z != pb.z) return lex_less(pa, pb);
  return ia < ib;
}

inline bool farther(double d2a, const Vec3& pa, int64_t ia, double d2b, const Vec3& pb, int64_t ib) {
  if (d2a != d2b) return d2a > d2b;
  if (pa.x != pb.x || pa.y != pb.y || pa.z != pb.z) return lex_less(pa, pb);
  return ia < ib;
}

}  // namespace detail

// Farthest-point sampling. The start point is the one farthest from the
// centroid (pass an rng for a randomized start instead); every later pick
// maximizes distance to the selected set.
inline ad::IndexArray fps(const std::vector<Vec3>& positions, int64_t m, Rng* start_rng = nullptr) {
  const int64_t N = static_cast<int64_t>(positions.size());
  if (m < 1 || m > N)
    throw Error("fps: m = " + std::to_string(m) + " out of range for " + std::to_string(N) + " points");
  Vec3 c{};
  for (const Vec3& p : positions) c = c + p;
  c = c * (1.0 / static_cast<double>(N));

  ad::IndexArray out;
  out.reserve(static_cast<size_t>(m));
  std::vector<double> mind2(static_cast<size_t>(N), std::numeric_limits<double>::infinity());

  int64_t cur = 0;
  if (start_rng) {
    cur = static_cast<int64_t>(start_rng->uniform_index(static_cast<uint64_t>(N)));
  } else {
    double best = (positions[0] - c).norm2();
    for (int64_t i = 1; i < N; ++i) {
      double d2 = (positions[static_cast<size_t>(i)] - c).norm2();
      if (detail::farther(d2, positions[static_cast<size_t>(i)], i, best,
                          positions[static_cast<size_t>(cur)], cur)) {
        best = d2;
        cur = i;
      }
    }
  }
  out.push_back(cur);
  for (int64_t picked = 1; picked < m; ++picked) {
    const Vec3& last = positions[static_cast<size_t>(cur)];
    int64_t next = -1;
    double best = -1.0;
    for (int64_t i = 0; i < N; ++i) {
      double d2 = (positions[static_cast<size_t>(i)] - last).norm2();
      double& md = mind2[static_cast<size_t>(i)];
      if (d2 < md) md = d2;
      // selected points carry mind2 == 0 and cannot beat any unselected
      // candidate with positive distance
      if (next < 0 || detail::farther(md, positions[static_cast<size_t>(i)], i, best,
                                      positions[static_cast<size_t>(next)], next)) {
        best = md;
        next = i;
      }
    }
    // degenerate all-coincident clouds: fall back to the first unselected index
    if (std::find(out.begin(), out.end(), next) != out.end()) {
      for (int64_t i = 0; i < N; ++i) {
        if (std::find(out.begin(), out.end(), i) == out.end()) {
          next = i;
          break;
        }
      }
    }
    out.push_back(next);
    cur = next;
  }
  return out;
}

// For each center, the k nearest points sorted by ascending distance.
// Returns a row-major M x k index array into `positions`.
inline ad::IndexArray knn_group(const std::vector<Vec3>& centers,
                                const std::vector<Vec3>& positions, int64_t k) {
  const int64_t N = static_cast<int64_t>(positions.size());
  const int64_t M = static_cast<int64_t>(centers.size());
  if (k < 1 || k > N)
    throw Error("knn_group: k = " + std::to_string(k) + " out of range for " + std::to_string(N) + " points");
  ad::IndexArray out(static_cast<size_t>(M * k));
  parallel_for(M, std::max<int64_t>(1, 50000 / std::max<int64_t>(1, N)), [&](int64_t lo, int64_t hi) {
    std::vector<std::pair<double, int64_t>> cand(static_cast<size_t>(N));
    for (int64_t ci = lo; ci < hi; ++ci) {
      const Vec3& c = centers[static_cast<size_t>(ci)];
      for (int64_t i = 0; i < N; ++i)
        cand[static_cast<size_t>(i)] = {(positions[static_cast<size_t>(i)] - c).norm2(), i};
      auto cmp = [&](const std::pair<double, int64_t>& a, const std::pair<double, int64_t>& b) {
        return detail::nearer(a.first, positions[static_cast<size_t>(a.second)], a.second, b.first,
                              positions[static_cast<size_t>(b.second)], b.second);
      };
      std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end(), cmp);
      std::sort(cand.begin(), cand.begin() + k, cmp);
      for (int64_t j = 0; j < k; ++j) out[static_cast<size_t>(ci * k + j)] = cand[static_cast<size_t>(j)].second;
    }
  });
  return out;
}

// Index of the single nearest source for each destination point.
inline ad::IndexArray nearest_source(const std::vector<Vec3>& src_pos,
                                     const std::vector<Vec3>& dst_pos) {
  const int64_t S = static_cast<int64_t>(src_pos.size());
  if (S < 1) throw Error("nearest_source: no source points");
  const int64_t N = static_cast<int64_t>(dst_pos.size());
  ad::IndexArray idx(static_cast<size_t>(N));
  parallel_for(N, std::max<int64_t>(1, 50000 / std::max<int64_t>(1, S)), [&](int64_t lo, int64_t hi) {
    for (int64_t di = lo; di < hi; ++di) {
      const Vec3& d = dst_pos[static_cast<size_t>(di)];
      int64_t best = 0;
      double bd = (src_pos[0] - d).norm2();
      for (int64_t i = 1; i < S; ++i) {
        double d2 = (src_pos[static_cast<size_t>(i)] - d).norm2();
        if (detail::nearer(d2, src_pos[static_cast<size_t>(i)], i, bd, src_pos[static_cast<size_t>(best)], best)) {
          bd = d2;
          best = i;
        }
      }
      idx[static_cast<size_t>(di)] = best;
    }
  });
  return idx;
}

// Each destination point copies the feature row of its nearest source point.
// Differentiable in src_feat (gather, so backward scatter-adds).
inline ad::Tensor nn_interpolate(const std::vector<Vec3>& src_pos, const ad::Tensor& src_feat,
                                 const std::vector<Vec3>& dst_pos) {
  if (src_feat.rows() != static_cast<int64_t>(src_pos.size()))
    throw ShapeError("nn_interpolate: " + std::to_string(src_pos.size()) + " source points but features are " +
                     shape_str(src_feat.shape()));
  return ad::gather_rows(src_feat, nearest_source(src_pos, dst_pos));
}

// Positions as an N x 3 constant tensor (network input plumbing).
inline ad::Tensor positions_tensor(const std::vector<Vec3>& pts) {
  ad::Tensor t({static_cast<int64_t>(pts.size()), 3});
  double* d = t.data();
  for (size_t i = 0; i < pts.size(); ++i) {
    d[i * 3 + 0] = pts[i].x;
    d[i * 3 + 1] = pts[i].y;
    d[i * 3 + 2] = pts[i].z;
  }
  return t;
}

}  // namespace s2s::geom
