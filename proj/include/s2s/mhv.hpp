#pragma once

// Voxel-based multi-scale high-resolution backbone. Subsampling and
// upsampling run purely on hierarchy indices: point->voxel means going down,
// inverse-index gathers going up. The local aggregator stacks submanifold
// gathers with a shared linear map over the 27 offset blocks, combines the
// result with the subsampled input (skip), and an MLP produces x_s. Modules
// chain at voxel resolution: module s consumes the previous module's x_s.

#include <string>
#include <vector>

#include "s2s/geometry.hpp"
#include "s2s/nn.hpp"
#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"
#include "s2s/voxelgrid.hpp"

namespace s2s::mhv {

struct NetConfig {
  std::vector<int> scales = {2, 4, 8, 16};         // voxel-size multipliers
  std::vector<int64_t> widths = {64, 128, 256, 512};
  int conv_layers = 2;          // stacked submanifold layers per module
  double base_voxel_size = 0.05;
  int64_t head_hidden = 256;
  int64_t embed_dim = 128;
  int64_t aux_dim = 0;

  void validate() const {
    if (scales.empty() || scales.size() != widths.size())
      throw ConfigError("mhv: scales and widths must align and be non-empty");
    for (size_t i = 1; i < scales.size(); ++i)
      if (scales[i] != scales[i - 1] * 2) throw ConfigError("mhv: scales must consecutively double");
    if (conv_layers < 1) throw ConfigError("mhv: conv_layers must be >= 1");
    if (base_voxel_size <= 0.0) throw ConfigError("mhv: base_voxel_size must be positive");
    if (head_hidden < 1 || embed_dim < 1) throw ConfigError("mhv: head sizes must be positive");
  }
};

struct Module {
  int scale = 2;
  int64_t width = 64;
  std::vector<nn::Linear> conv;       // 27*C_in -> width, then 27*width -> width
  std::vector<nn::NormLayer> conv_norm;
  nn::Mlp fuse;                       // [subsampled input || conv output] -> width
};

struct Net {
  NetConfig cfg;
  std::vector<Module> modules;
  nn::Mlp point_head;   // concat{x_s_h} -> head_hidden -> embed_dim
  nn::Mlp region_head;  // [x_4 || x_8->4 || x_16->4] -> head_hidden -> embed_dim
  nn::ParamStore store;
};

inline Net make_net(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  Net net;
  net.cfg = cfg;
  int64_t in_width = 3 + cfg.aux_dim;
  int64_t concat_width = 0;
  for (size_t i = 0; i < cfg.scales.size(); ++i) {
    Module m;
    m.scale = cfg.scales[i];
    m.width = cfg.widths[i];
    std::string base = "module" + std::to_string(m.scale);
    int64_t c = in_width;
    for (int l = 0; l < cfg.conv_layers; ++l) {
      std::string lname = base + ".conv" + std::to_string(l);
      m.conv.push_back(nn::make_linear(net.store, lname, 27 * c, m.width, rng));
      m.conv_norm.push_back(nn::make_norm(net.store, lname + ".norm", m.width));
      c = m.width;
    }
    m.fuse = nn::make_mlp(net.store, base + ".fuse", in_width + m.width, {m.width}, rng, true);
    net.modules.push_back(std::move(m));
    in_width = m.width;
    concat_width += m.width;
  }
  net.point_head = nn::make_mlp(net.store, "point_head", concat_width,
                                {cfg.head_hidden, cfg.embed_dim}, rng, false);
  if (cfg.scales.size() >= 3) {
    int64_t region_width = cfg.widths[cfg.widths.size() - 3] + cfg.widths[cfg.widths.size() - 2] +
                           cfg.widths.back();
    net.region_head = nn::make_mlp(net.store, "region_head", region_width,
                                   {cfg.head_hidden, cfg.embed_dim}, rng, false);
  }
  return net;
}

struct ForwardState {
  voxel::VoxelHierarchy hierarchy;
  std::vector<ad::Tensor> x_s;    // per module, at that module's voxel resolution
  std::vector<ad::Tensor> x_s_h;  // per module, at point resolution
};

namespace detail {

inline ad::Tensor input_features(const geom::PointCloud& cloud, int64_t aux_dim) {
  if (cloud.aux_dim != aux_dim) {
    throw ShapeError("mhv: net expects aux_dim " + std::to_string(aux_dim) + " but cloud has " +
                     std::to_string(cloud.aux_dim));
  }
  ad::Tensor pos = geom::positions_tensor(cloud.positions);
  if (aux_dim == 0) return pos;
  ad::Tensor aux({cloud.size(), aux_dim});
  std::copy(cloud.aux.begin(), cloud.aux.end(), aux.data());
  return ad::concat_cols({pos, aux});
}

}  // namespace detail

// One MH module at `mod.scale`. feats_in sits at point resolution for the
// first module and at the previous module's voxel resolution afterwards.
inline ad::Tensor module_forward(const voxel::VoxelHierarchy& h, const ad::Tensor& feats_in,
                                 const Module& mod, bool first) {
  ad::Tensor sub;
  if (first) {
    if (feats_in.rows() != h.num_points) {
      throw ShapeError("mhv::module_forward: expected " + std::to_string(h.num_points) +
                       " point rows, got " + shape_str(feats_in.shape()));
    }
    sub = voxel::pool_points_to_voxels(feats_in, h, mod.scale);
  } else {
    const auto& prev = h.at_scale(mod.scale / 2);
    if (feats_in.rows() != prev.voxel_count) {
      throw ShapeError("mhv::module_forward: expected " + std::to_string(prev.voxel_count) +
                       " voxel rows at scale " + std::to_string(mod.scale / 2) + ", got " +
                       shape_str(feats_in.shape()));
    }
    sub = voxel::pool_voxels_up(feats_in, h, mod.scale / 2);
  }
  ad::Tensor x = sub;
  for (size_t l = 0; l < mod.conv.size(); ++l) {
    ad::Tensor gathered = voxel::submanifold_gather(x, h, mod.scale);
    x = ad::relu(mod.conv_norm[l](mod.conv[l](gathered)));
  }
  return mod.fuse(ad::concat_cols({sub, x}));
}

inline ForwardState backbone_forward(const Net& net, const geom::PointCloud& cloud) {
  cloud.validate();
  ForwardState st;
  st.hierarchy = voxel::build_hierarchy(cloud.positions, net.cfg.base_voxel_size, net.cfg.scales);
  if (st.hierarchy.scales.front().voxel_count < 2) {
    throw Error("mhv: degenerate cloud occupies a single voxel at scale " +
                std::to_string(net.cfg.scales.front()));
  }
  ad::Tensor feats = detail::input_features(cloud, net.cfg.aux_dim);
  for (size_t i = 0; i < net.modules.size(); ++i) {
    const Module& m = net.modules[i];
    ad::Tensor xs = module_forward(st.hierarchy, feats, m, i == 0);
    st.x_s.push_back(xs);
    st.x_s_h.push_back(voxel::unpool_voxels_to_points(xs, st.hierarchy, m.scale));
    feats = xs;
  }
  return st;
}

// Per-point embeddings: point head over the concatenated x_s_h of all scales.
inline ad::Tensor point_forward(const Net& net, const geom::PointCloud& cloud) {
  ForwardState st = backbone_forward(net, cloud);
  return net.point_head(ad::concat_cols(st.x_s_h));
}

struct RegionOutput {
  ad::Tensor embeddings;  // scale-4 voxel resolution
  ForwardState state;
};

// Detection-style wiring: x_8 and x_16 are brought down to scale-4 voxel
// resolution through the inverse voxel indices and fused with x_4.
inline RegionOutput region_forward(const Net& net, const geom::PointCloud& cloud) {
  if (net.cfg.scales.size() < 3) throw Error("mhv::region_forward: needs scales 4, 8 and 16");
  RegionOutput out;
  out.state = backbone_forward(net, cloud);
  const auto& scales = net.cfg.scales;
  size_t i4 = scales.size() - 3, i8 = scales.size() - 2, i16 = scales.size() - 1;
  const voxel::VoxelHierarchy& h = out.state.hierarchy;
  ad::Tensor x8_to_4 = voxel::gather_parent_to_child(out.state.x_s[i8], h, scales[i4]);
  ad::Tensor x16_to_8 = voxel::gather_parent_to_child(out.state.x_s[i16], h, scales[i8]);
  ad::Tensor x16_to_4 = voxel::gather_parent_to_child(x16_to_8, h, scales[i4]);
  out.embeddings = net.region_head(ad::concat_cols({out.state.x_s[i4], x8_to_4, x16_to_4}));
  return out;
}

// Majority shape mark per voxel at `scale`; ties go to the lowest mark.
inline ad::IndexArray voxel_majority_marks(const voxel::VoxelHierarchy& h, int scale,
                                           const ad::IndexArray& point_marks) {
  const auto& vs = h.at_scale(scale);
  if (static_cast<int64_t>(point_marks.size()) != h.num_points)
    throw ShapeError("voxel_majority_marks: mark count does not match hierarchy points");
  int64_t max_mark = 0;
  for (int64_t mk : point_marks) max_mark = std::max(max_mark, mk);
  std::vector<int64_t> counts(static_cast<size_t>(vs.voxel_count * (max_mark + 1)), 0);
  for (size_t i = 0; i < point_marks.size(); ++i) {
    int64_t v = vs.point_to_voxel[i];
    counts[static_cast<size_t>(v * (max_mark + 1) + point_marks[i])]++;
  }
  ad::IndexArray out(static_cast<size_t>(vs.voxel_count));
  for (int64_t v = 0; v < vs.voxel_count; ++v) {
    int64_t best = 0, best_count = -1;
    for (int64_t mk = 0; mk <= max_mark; ++mk) {
      int64_t c = counts[static_cast<size_t>(v * (max_mark + 1) + mk)];
      if (c > best_count) {
        best = mk;
        best_count = c;
      }
    }
    out[static_cast<size_t>(v)] = best;
  }
  return out;
}

}  // namespace s2s::mhv
