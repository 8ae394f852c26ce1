#pragma once

// Hierarchical voxelization over occupied integer coordinates. The hierarchy
// carries point->voxel indices, voxel->parent indices and the occupied
// 27-neighborhood so the voxel backbone can subsample, upsample and gather
// neighbors purely through index arrays.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/geometry.hpp"
#include "s2s/tensor.hpp"

namespace s2s::voxel {

using Coord = std::array<int64_t, 3>;

struct CoordHash {
  size_t operator()(const Coord& c) const {
    uint64_t h = 0x9e3779b97f4a7c15ull;
    for (int64_t v : c) {
      h ^= static_cast<uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return static_cast<size_t>(h);
  }
};

struct NeighborPair {
  int64_t voxel;
  int64_t neighbor;
  int offset;  // 0..26; (dx+1)*9 + (dy+1)*3 + (dz+1), center = 13
};

constexpr int kCenterOffset = 13;

struct VoxelScale {
  int scale = 0;             // voxel-size multiplier relative to base_size
  double voxel_size = 0.0;   // base_size * scale
  int64_t voxel_count = 0;
  ad::IndexArray point_to_voxel;              // length N
  std::vector<Coord> voxel_coords;            // per voxel
  ad::IndexArray voxel_to_parent;             // empty at the coarsest scale
  std::vector<NeighborPair> neighbor_pairs;   // sorted by (voxel, offset)
};

struct VoxelHierarchy {
  double base_size = 0.0;
  int64_t num_points = 0;
  std::vector<VoxelScale> scales;

  const VoxelScale& at_scale(int s) const {
    for (const VoxelScale& vs : scales)
      if (vs.scale == s) return vs;
    throw Error("VoxelHierarchy: scale " + std::to_string(s) + " not built");
  }
  bool has_scale(int s) const {
    for (const VoxelScale& vs : scales)
      if (vs.scale == s) return true;
    return false;
  }
};

namespace detail {

inline void build_neighbors(VoxelScale& vs) {
  std::unordered_map<Coord, int64_t, CoordHash> occ;
  occ.reserve(static_cast<size_t>(vs.voxel_count) * 2);
  for (int64_t v = 0; v < vs.voxel_count; ++v) occ.emplace(vs.voxel_coords[static_cast<size_t>(v)], v);
  for (int64_t v = 0; v < vs.voxel_count; ++v) {
    const Coord& c = vs.voxel_coords[static_cast<size_t>(v)];
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          Coord q{c[0] + dx, c[1] + dy, c[2] + dz};
          auto it = occ.find(q);
          if (it == occ.end()) continue;
          int off = (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1);
          vs.neighbor_pairs.push_back({v, it->second, off});
        }
  }
}

}  // namespace detail

// Voxel ids are assigned in first-occurrence order of points, so the same
// point set always yields the same partition. Coarser-scale coordinates are
// derived by halving the finer integer coordinates, which makes
// parent_coord == floor(child_coord / 2) hold exactly.
inline VoxelHierarchy build_hierarchy(const std::vector<geom::Vec3>& positions, double base_size,
                                      const std::vector<int>& scales = {2, 4, 8, 16}) {
  if (base_size <= 0.0) throw Error("build_hierarchy: base_size must be positive");
  if (scales.empty()) throw Error("build_hierarchy: no scales requested");
  for (size_t i = 1; i < scales.size(); ++i) {
    if (scales[i] != scales[i - 1] * 2)
      throw Error("build_hierarchy: scales must consecutively double, got " +
                  std::to_string(scales[i - 1]) + " then " + std::to_string(scales[i]));
  }
  const int64_t n = static_cast<int64_t>(positions.size());
  if (n == 0) throw Error("build_hierarchy: no points");
  for (const auto& p : positions)
    if (!p.finite()) throw Error("build_hierarchy: non-finite position");

  VoxelHierarchy h;
  h.base_size = base_size;
  h.num_points = n;
  h.scales.resize(scales.size());

  // finest scale straight from positions
  {
    VoxelScale& vs = h.scales[0];
    vs.scale = scales[0];
    vs.voxel_size = base_size * scales[0];
    vs.point_to_voxel.resize(static_cast<size_t>(n));
    std::unordered_map<Coord, int64_t, CoordHash> ids;
    ids.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      const geom::Vec3& p = positions[static_cast<size_t>(i)];
      Coord c{static_cast<int64_t>(std::floor(p.x / vs.voxel_size)),
              static_cast<int64_t>(std::floor(p.y / vs.voxel_size)),
              static_cast<int64_t>(std::floor(p.z / vs.voxel_size))};
      auto [it, fresh] = ids.emplace(c, static_cast<int64_t>(vs.voxel_coords.size()));
      if (fresh) vs.voxel_coords.push_back(c);
      vs.point_to_voxel[static_cast<size_t>(i)] = it->second;
    }
    vs.voxel_count = static_cast<int64_t>(vs.voxel_coords.size());
  }

  // coarser scales by halving the finer scale's integer coordinates
  for (size_t si = 1; si < scales.size(); ++si) {
    VoxelScale& fine = h.scales[si - 1];
    VoxelScale& vs = h.scales[si];
    vs.scale = scales[si];
    vs.voxel_size = base_size * scales[si];
    std::unordered_map<Coord, int64_t, CoordHash> ids;
    ids.reserve(static_cast<size_t>(fine.voxel_count));
    fine.voxel_to_parent.resize(static_cast<size_t>(fine.voxel_count));
    for (int64_t v = 0; v < fine.voxel_count; ++v) {
      const Coord& c = fine.voxel_coords[static_cast<size_t>(v)];
      auto half = [](int64_t x) { return static_cast<int64_t>(std::floor(static_cast<double>(x) / 2.0)); };
      Coord parent{half(c[0]), half(c[1]), half(c[2])};
      auto [it, fresh] = ids.emplace(parent, static_cast<int64_t>(vs.voxel_coords.size()));
      if (fresh) vs.voxel_coords.push_back(parent);
      fine.voxel_to_parent[static_cast<size_t>(v)] = it->second;
    }
    vs.voxel_count = static_cast<int64_t>(vs.voxel_coords.size());
    vs.point_to_voxel.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      vs.point_to_voxel[static_cast<size_t>(i)] =
          fine.voxel_to_parent[static_cast<size_t>(fine.point_to_voxel[static_cast<size_t>(i)])];
    }
  }

  for (VoxelScale& vs : h.scales) detail::build_neighbors(vs);
  return h;
}

// Mean of point features per voxel at scale s (differentiable).
inline ad::Tensor pool_points_to_voxels(const ad::Tensor& features, const VoxelHierarchy& h, int s) {
  const VoxelScale& vs = h.at_scale(s);
  if (features.rows() != h.num_points) {
    throw ShapeError("pool_points_to_voxels: features are " + shape_str(features.shape()) +
                     " but hierarchy has " + std::to_string(h.num_points) + " points");
  }
  return ad::segment_mean(features, vs.point_to_voxel, vs.voxel_count);
}

// Voxel features copied back to their points via the inverse indices.
inline ad::Tensor unpool_voxels_to_points(const ad::Tensor& vfeat, const VoxelHierarchy& h, int s) {
  const VoxelScale& vs = h.at_scale(s);
  if (vfeat.rows() != vs.voxel_count) {
    throw ShapeError("unpool_voxels_to_points: features are " + shape_str(vfeat.shape()) +
                     " but scale " + std::to_string(s) + " has " + std::to_string(vs.voxel_count) + " voxels");
  }
  return ad::gather_rows(vfeat, vs.point_to_voxel);
}

// Mean of scale-s voxel features per scale-2s parent voxel.
inline ad::Tensor pool_voxels_up(const ad::Tensor& vfeat, const VoxelHierarchy& h, int s) {
  const VoxelScale& vs = h.at_scale(s);
  if (vfeat.rows() != vs.voxel_count) {
    throw ShapeError("pool_voxels_up: features are " + shape_str(vfeat.shape()) + " but scale " +
                     std::to_string(s) + " has " + std::to_string(vs.voxel_count) + " voxels");
  }
  if (vs.voxel_to_parent.empty())
    throw Error("pool_voxels_up: scale " + std::to_string(s) + " has no parent scale");
  const VoxelScale& parent = h.at_scale(s * 2);
  return ad::segment_mean(vfeat, vs.voxel_to_parent, parent.voxel_count);
}

// Copy scale-2s parent features down to scale-s voxels.
inline ad::Tensor gather_parent_to_child(const ad::Tensor& vfeat, const VoxelHierarchy& h, int s) {
  const VoxelScale& vs = h.at_scale(s);
  const VoxelScale& parent = h.at_scale(s * 2);
  if (vfeat.rows() != parent.voxel_count) {
    throw ShapeError("gather_parent_to_child: features are " + shape_str(vfeat.shape()) +
                     " but scale " + std::to_string(s * 2) + " has " +
                     std::to_string(parent.voxel_count) + " voxels");
  }
  return ad::gather_rows(vfeat, vs.voxel_to_parent);
}

// For every occupied voxel, the features of occupied voxels at each of the
// 27 integer offsets, zero where unoccupied. The output voxel set equals the
// input voxel set, so stacks never dilate occupancy.
inline ad::Tensor submanifold_gather(const ad::Tensor& vfeat, const VoxelHierarchy& h, int s) {
  const VoxelScale& vs = h.at_scale(s);
  if (vfeat.rows() != vs.voxel_count) {
    throw ShapeError("submanifold_gather: features are " + shape_str(vfeat.shape()) + " but scale " +
                     std::to_string(s) + " has " + std::to_string(vs.voxel_count) + " voxels");
  }
  const int64_t v = vs.voxel_count, c = vfeat.cols();
  ad::Tensor out({v, 27 * c});
  {
    const double* fd = vfeat.data();
    double* od = out.data();
    for (const NeighborPair& p : vs.neighbor_pairs) {
      const double* src = fd + p.neighbor * c;
      double* dst = od + p.voxel * 27 * c + p.offset * c;
      std::copy(src, src + c, dst);
    }
  }
  if (ad::active_tape() && vfeat.requires_grad()) {
    out.set_requires_grad(true);
    ad::Tensor fc = vfeat, oc = out;
    // the closure may outlive the hierarchy, so it owns a copy of the pairs
    auto pairs = std::make_shared<std::vector<NeighborPair>>(vs.neighbor_pairs);
    ad::active_tape()->record([fc, oc, pairs]() mutable {
      oc.ensure_grad();
      fc.ensure_grad();
      const int64_t c = fc.cols();
      const double* go = oc.grad();
      double* gf = fc.grad();
      for (const NeighborPair& p : *pairs) {
        const double* src = go + p.voxel * 27 * c + p.offset * c;
        double* dst = gf + p.neighbor * c;
        for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

}  // namespace s2s::voxel
