#pragma once

// Point-based multi-scale high-resolution backbone. Each module subsamples
// centers with FPS, aggregates kNN neighborhoods twice (set abstraction and
// local aggregation), then maps the center features back to every input
// point by 1-NN interpolation. Modules chain at full resolution: module s
// consumes the previous module's x_s_h.

#include <string>
#include <vector>

#include "s2s/geometry.hpp"
#include "s2s/nn.hpp"
#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"

namespace s2s::mhp {

struct ModuleConfig {
  int scale = 2;                       // point-count divisor
  std::vector<int64_t> widths = {64};  // shared MLP channel sizes
  int64_t k = 16;                      // neighbors per group

  void validate() const {
    if (scale < 2) throw ConfigError("mhp: module scale must be >= 2");
    if (widths.empty()) throw ConfigError("mhp: module widths must be non-empty");
    if (k < 1) throw ConfigError("mhp: k must be >= 1");
  }
};

struct NetConfig {
  std::vector<ModuleConfig> modules = {{2, {64}, 16}, {4, {128}, 16}, {8, {256}, 16}, {16, {512}, 16}};
  int64_t head_hidden = 256;
  int64_t embed_dim = 128;
  int64_t aux_dim = 0;  // extra per-point input channels alongside xyz

  void validate() const {
    if (modules.empty()) throw ConfigError("mhp: need at least one module");
    int prev = 1;
    for (const auto& m : modules) {
      m.validate();
      if (m.scale <= prev) throw ConfigError("mhp: module scales must strictly increase");
      prev = m.scale;
    }
    if (head_hidden < 1 || embed_dim < 1) throw ConfigError("mhp: head sizes must be positive");
  }
};

struct Module {
  ModuleConfig cfg;
  nn::Mlp sa_mlp;   // [rel pos || neighbor feature] -> widths
  nn::Mlp agg_mlp;  // same pattern over center neighborhoods
  int64_t out_width() const { return sa_mlp.out_features(); }
};

struct Net {
  NetConfig cfg;
  std::vector<Module> modules;
  nn::Mlp point_head;  // concat{x_s_h} -> head_hidden -> embed_dim
  nn::Mlp shape_head;  // concat{x_s_g} -> head_hidden -> embed_dim
  nn::ParamStore store;
};

inline Net make_net(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  Net net;
  net.cfg = cfg;
  int64_t in_width = 3 + cfg.aux_dim;
  int64_t concat_width = 0;
  for (size_t i = 0; i < cfg.modules.size(); ++i) {
    const ModuleConfig& mc = cfg.modules[i];
    Module m;
    m.cfg = mc;
    std::string base = "module" + std::to_string(mc.scale);
    m.sa_mlp = nn::make_mlp(net.store, base + ".sa", 3 + in_width, mc.widths, rng, true);
    int64_t w = mc.widths.back();
    m.agg_mlp = nn::make_mlp(net.store, base + ".agg", 3 + w, {w}, rng, true);
    net.modules.push_back(std::move(m));
    in_width = w;
    concat_width += w;
  }
  net.point_head = nn::make_mlp(net.store, "point_head", concat_width,
                                {cfg.head_hidden, cfg.embed_dim}, rng, false);
  net.shape_head = nn::make_mlp(net.store, "shape_head", concat_width,
                                {cfg.head_hidden, cfg.embed_dim}, rng, false);
  return net;
}

struct ModuleOutput {
  ad::Tensor x_s;    // centers x C
  ad::Tensor x_s_h;  // N x C, mapped back to every input point
  std::vector<geom::Vec3> centers;
};

namespace detail {

// Group rows [rel position || feature] for each (center, neighbor) pair,
// run the shared MLP, then max-pool each group.
inline ad::Tensor group_and_pool(const std::vector<geom::Vec3>& centers,
                                 const std::vector<geom::Vec3>& points,
                                 const ad::Tensor& feats, int64_t k, const nn::Mlp& mlp) {
  const int64_t m = static_cast<int64_t>(centers.size());
  ad::IndexArray nbr = geom::knn_group(centers, points, k);
  ad::Tensor rel({m * k, 3});
  {
    double* rd = rel.data();
    for (int64_t ci = 0; ci < m; ++ci) {
      for (int64_t j = 0; j < k; ++j) {
        const geom::Vec3 d = points[static_cast<size_t>(nbr[static_cast<size_t>(ci * k + j)])] -
                             centers[static_cast<size_t>(ci)];
        int64_t row = ci * k + j;
        rd[row * 3 + 0] = d.x;
        rd[row * 3 + 1] = d.y;
        rd[row * 3 + 2] = d.z;
      }
    }
  }
  ad::Tensor grouped = ad::concat_cols({rel, ad::gather_rows(feats, nbr)});
  ad::Tensor lifted = mlp(grouped);
  ad::IndexArray segment(static_cast<size_t>(m * k));
  for (int64_t i = 0; i < m * k; ++i) segment[static_cast<size_t>(i)] = i / k;
  return ad::segment_max(lifted, segment, m);
}

}  // namespace detail

// One MH module: FPS subsampling + set abstraction, local aggregation among
// centers, and high-resolution mapping back to the input points.
inline ModuleOutput module_forward(const std::vector<geom::Vec3>& points, const ad::Tensor& feats_in,
                                   const Module& mod) {
  const int64_t n = static_cast<int64_t>(points.size());
  if (feats_in.rows() != n) {
    throw ShapeError("mhp::module_forward: " + std::to_string(n) + " points but features are " +
                     shape_str(feats_in.shape()));
  }
  const int64_t n_centers = n / mod.cfg.scale;
  if (n_centers < mod.cfg.k) {
    throw Error("mhp::module_forward: scale " + std::to_string(mod.cfg.scale) + " leaves " +
                std::to_string(n_centers) + " centers for " + std::to_string(n) +
                " points, fewer than k = " + std::to_string(mod.cfg.k));
  }
  ModuleOutput out;
  ad::IndexArray center_idx = geom::fps(points, n_centers);
  out.centers.resize(static_cast<size_t>(n_centers));
  for (int64_t i = 0; i < n_centers; ++i)
    out.centers[static_cast<size_t>(i)] = points[static_cast<size_t>(center_idx[static_cast<size_t>(i)])];

  ad::Tensor sa = detail::group_and_pool(out.centers, points, feats_in, mod.cfg.k, mod.sa_mlp);
  out.x_s = detail::group_and_pool(out.centers, out.centers, sa, mod.cfg.k, mod.agg_mlp);
  out.x_s_h = geom::nn_interpolate(out.centers, out.x_s, points);
  return out;
}

namespace detail {

inline ad::Tensor input_features(const geom::PointCloud& cloud, int64_t aux_dim) {
  if (cloud.aux_dim != aux_dim) {
    throw ShapeError("mhp: net expects aux_dim " + std::to_string(aux_dim) + " but cloud has " +
                     std::to_string(cloud.aux_dim));
  }
  ad::Tensor pos = geom::positions_tensor(cloud.positions);
  if (aux_dim == 0) return pos;
  ad::Tensor aux({cloud.size(), aux_dim});
  std::copy(cloud.aux.begin(), cloud.aux.end(), aux.data());
  return ad::concat_cols({pos, aux});
}

inline void check_point_budget(const Net& net, int64_t n) {
  const ModuleConfig& deepest = net.modules.back().cfg;
  if (n / deepest.scale < deepest.k) {
    throw Error("mhp: " + std::to_string(n) + " points leave fewer than k = " +
                std::to_string(deepest.k) + " centers at scale " + std::to_string(deepest.scale));
  }
}

}  // namespace detail

// Runs the module stack; x_s_h of each module feeds the next one.
inline std::vector<ModuleOutput> backbone_forward(const Net& net, const geom::PointCloud& cloud) {
  cloud.validate();
  detail::check_point_budget(net, cloud.size());
  ad::Tensor feats = detail::input_features(cloud, net.cfg.aux_dim);
  std::vector<ModuleOutput> outs;
  outs.reserve(net.modules.size());
  for (const Module& m : net.modules) {
    outs.push_back(module_forward(cloud.positions, feats, m));
    feats = outs.back().x_s_h;
  }
  return outs;
}

// Per-point embeddings: point head over the concatenated x_s_h of all scales.
inline ad::Tensor point_forward(const Net& net, const geom::PointCloud& cloud) {
  std::vector<ModuleOutput> outs = backbone_forward(net, cloud);
  std::vector<ad::Tensor> hs;
  for (auto& o : outs) hs.push_back(o.x_s_h);
  return net.point_head(ad::concat_cols(hs));
}

// Global feature: per scale, one more max pooling over x_s, concatenated.
inline ad::Tensor global_feature(const Net& net, const geom::PointCloud& cloud) {
  std::vector<ModuleOutput> outs = backbone_forward(net, cloud);
  std::vector<ad::Tensor> gs;
  for (auto& o : outs) {
    ad::IndexArray zeros(static_cast<size_t>(o.x_s.rows()), 0);
    gs.push_back(ad::segment_max(o.x_s, zeros, 1));
  }
  return ad::concat_cols(gs);
}

// Shape-level embedding: shape head over the global feature.
inline ad::Tensor shape_forward(const Net& net, const geom::PointCloud& cloud) {
  return net.shape_head(global_feature(net, cloud));
}

}  // namespace s2s::mhp
