#pragma once

// Shape-to-scene synthesis: resample and normalize M shapes, place them with
// pairwise barycenter distance > 2, produce two independently transformed
// views, and sample matched point pairs between the views.

#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/geometry.hpp"
#include "s2s/rng.hpp"

namespace s2s::scene {

struct PseudoScene {
  std::vector<geom::Vec3> base_positions;  // pre-transform composite
  std::vector<geom::Vec3> view1, view2;    // row-aligned with base_positions
  ad::IndexArray shape_mark;               // which shape each point came from
  geom::SimilarityTransform t1, t2;
  int64_t m = 0;                 // shape count
  int64_t points_per_shape = 0;
};

// Matched pairs: u indexes view-1 rows, v indexes view-2 rows.
struct PairSet {
  ad::IndexArray u, v;
  int64_t size() const { return static_cast<int64_t>(u.size()); }
};

struct SceneConfig {
  int64_t points_per_shape = 2048;
  double min_barycenter_dist = 2.0;
  double placement_margin = 0.05;
  int64_t max_placement_attempts = 10000;
};

namespace detail {

// Rejection-sampled barycenters inside a cube of side 2.2 * ceil(m^(1/3)).
// If the attempt budget runs out the cube grows once by 1.5x.
inline std::vector<geom::Vec3> place_barycenters(int64_t m, const SceneConfig& cfg, Rng& rng) {
  double side = 2.2 * std::ceil(std::cbrt(static_cast<double>(m)));
  double need = cfg.min_barycenter_dist + cfg.placement_margin;
  for (int enlarge = 0; enlarge < 2; ++enlarge) {
    std::vector<geom::Vec3> out;
    out.reserve(static_cast<size_t>(m));
    double half = side / 2.0;
    int64_t attempts = 0;
    while (static_cast<int64_t>(out.size()) < m) {
      if (attempts >= cfg.max_placement_attempts) break;
      ++attempts;
      geom::Vec3 b{rng.uniform(-half, half), rng.uniform(-half, half), rng.uniform(-half, half)};
      bool ok = true;
      for (const auto& prev : out) {
        if ((b - prev).norm() <= need) {
          ok = false;
          break;
        }
      }
      if (ok) out.push_back(b);
    }
    if (static_cast<int64_t>(out.size()) == m) return out;
    side *= 1.5;
  }
  throw Error("compose_scene: barycenter placement failed after " +
              std::to_string(2 * cfg.max_placement_attempts) + " attempts for m = " + std::to_string(m));
}

}  // namespace detail

// Each shape is resampled to points_per_shape points, normalized to the unit
// sphere, and translated to its barycenter; shapes are concatenated in order
// with marks 0..m-1.
inline void compose_scene(const std::vector<const geom::PointCloud*>& shapes,
                          const SceneConfig& cfg, Rng& rng,
                          std::vector<geom::Vec3>& base_positions, ad::IndexArray& shape_mark) {
  const int64_t m = static_cast<int64_t>(shapes.size());
  if (m < 1) throw Error("compose_scene: need at least one shape");
  std::vector<geom::Vec3> centers = detail::place_barycenters(m, cfg, rng);
  base_positions.clear();
  shape_mark.clear();
  base_positions.reserve(static_cast<size_t>(m * cfg.points_per_shape));
  shape_mark.reserve(static_cast<size_t>(m * cfg.points_per_shape));
  for (int64_t k = 0; k < m; ++k) {
    geom::PointCloud cloud = geom::resample(*shapes[static_cast<size_t>(k)], cfg.points_per_shape, rng);
    cloud = geom::normalize_unit_sphere(std::move(cloud));
    for (const geom::Vec3& p : cloud.positions) {
      base_positions.push_back(p + centers[static_cast<size_t>(k)]);
      shape_mark.push_back(k);
    }
  }
}

// Two independent transform draws applied to the same base positions;
// row order is preserved in both views.
inline void two_views(const std::vector<geom::Vec3>& base_positions,
                      const geom::TransformConfig& cfg, Rng& rng, std::vector<geom::Vec3>& view1,
                      std::vector<geom::Vec3>& view2, geom::SimilarityTransform& t1,
                      geom::SimilarityTransform& t2) {
  t1 = geom::random_transform(cfg, rng);
  t2 = geom::random_transform(cfg, rng);
  view1 = geom::apply_transform(t1, base_positions);
  view2 = geom::apply_transform(t2, base_positions);
}

inline PseudoScene make_pseudo_scene(const std::vector<const geom::PointCloud*>& shapes,
                                     const SceneConfig& scfg, const geom::TransformConfig& tcfg,
                                     Rng& rng) {
  PseudoScene ps;
  ps.m = static_cast<int64_t>(shapes.size());
  ps.points_per_shape = scfg.points_per_shape;
  compose_scene(shapes, scfg, rng, ps.base_positions, ps.shape_mark);
  two_views(ps.base_positions, tcfg, rng, ps.view1, ps.view2, ps.t1, ps.t2);
  return ps;
}

namespace detail {

struct MarkGroups {
  std::vector<int64_t> mark_values;               // distinct marks in first-seen order
  std::vector<std::vector<int64_t>> rows;         // rows per mark
};

inline MarkGroups group_by_mark(const ad::IndexArray& marks) {
  MarkGroups g;
  std::vector<int64_t> slot;  // mark value -> group index
  for (size_t i = 0; i < marks.size(); ++i) {
    int64_t mk = marks[i];
    size_t gi = g.mark_values.size();
    for (size_t j = 0; j < g.mark_values.size(); ++j) {
      if (g.mark_values[j] == mk) {
        gi = j;
        break;
      }
    }
    if (gi == g.mark_values.size()) {
      g.mark_values.push_back(mk);
      g.rows.emplace_back();
    }
    g.rows[gi].push_back(static_cast<int64_t>(i));
  }
  return g;
}

// Uniform ns-subset of [0, universe) via Floyd's algorithm.
inline std::vector<uint64_t> floyd_sample(uint64_t universe, uint64_t ns, Rng& rng) {
  std::unordered_set<uint64_t> seen;
  std::vector<uint64_t> out;
  out.reserve(static_cast<size_t>(ns));
  for (uint64_t i = universe - ns; i < universe; ++i) {
    uint64_t j = rng.uniform_index(i + 1);
    if (seen.insert(j).second) {
      out.push_back(j);
    } else {
      seen.insert(i);
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace detail

// Number of admissible pairs {(i, j) : marks1[i] == marks2[j]}, i == j included.
inline uint64_t pair_universe_size(const ad::IndexArray& marks1, const ad::IndexArray& marks2) {
  detail::MarkGroups g1 = detail::group_by_mark(marks1);
  detail::MarkGroups g2 = detail::group_by_mark(marks2);
  uint64_t total = 0;
  for (size_t a = 0; a < g1.mark_values.size(); ++a) {
    for (size_t b = 0; b < g2.mark_values.size(); ++b) {
      if (g1.mark_values[a] == g2.mark_values[b])
        total += static_cast<uint64_t>(g1.rows[a].size()) * static_cast<uint64_t>(g2.rows[b].size());
    }
  }
  return total;
}

// ns pairs drawn uniformly without replacement from the positive-pair
// universe (with replacement only when the universe is smaller than ns).
// The general form takes separate mark arrays for the two views so region
// level training can pair voxels whose views voxelize differently.
inline PairSet sample_pairs(const ad::IndexArray& marks1, const ad::IndexArray& marks2, int64_t ns,
                            Rng& rng) {
  if (ns < 1) throw Error("sample_pairs: ns must be >= 1");
  detail::MarkGroups g1 = detail::group_by_mark(marks1);
  detail::MarkGroups g2 = detail::group_by_mark(marks2);

  // flatten matching (group1, group2) blocks into one linear universe
  struct Block {
    const std::vector<int64_t>* r1;
    const std::vector<int64_t>* r2;
    uint64_t start;
  };
  std::vector<Block> blocks;
  uint64_t total = 0;
  for (size_t a = 0; a < g1.mark_values.size(); ++a) {
    for (size_t b = 0; b < g2.mark_values.size(); ++b) {
      if (g1.mark_values[a] != g2.mark_values[b]) continue;
      blocks.push_back({&g1.rows[a], &g2.rows[b], total});
      total += static_cast<uint64_t>(g1.rows[a].size()) * static_cast<uint64_t>(g2.rows[b].size());
    }
  }
  if (total == 0) throw Error("sample_pairs: no positive pairs exist");

  std::vector<uint64_t> flat;
  if (static_cast<uint64_t>(ns) <= total) {
    flat = detail::floyd_sample(total, static_cast<uint64_t>(ns), rng);
  } else {
    flat.reserve(static_cast<size_t>(ns));
    for (int64_t i = 0; i < ns; ++i) flat.push_back(rng.uniform_index(total));
  }

  PairSet out;
  out.u.reserve(static_cast<size_t>(ns));
  out.v.reserve(static_cast<size_t>(ns));
  for (uint64_t t : flat) {
    size_t bi = blocks.size() - 1;
    for (size_t i = 0; i + 1 < blocks.size(); ++i) {
      if (t < blocks[i + 1].start) {
        bi = i;
        break;
      }
    }
    const Block& blk = blocks[bi];
    uint64_t local = t - blk.start;
    uint64_t n2 = blk.r2->size();
    out.u.push_back((*blk.r1)[static_cast<size_t>(local / n2)]);
    out.v.push_back((*blk.r2)[static_cast<size_t>(local % n2)]);
  }
  return out;
}

// Point-level pairing: both views share the same row-aligned marks.
inline PairSet sample_pairs(const ad::IndexArray& shape_mark, int64_t ns, Rng& rng) {
  return sample_pairs(shape_mark, shape_mark, ns, rng);
}

}  // namespace s2s::scene
