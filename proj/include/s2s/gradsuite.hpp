#pragma once

// The full finite-difference sweep: every differentiable op plus one full
// point module and a small voxel pipeline. Shared by the gradcheck CLI
// command and the acceptance suite.

#include <string>
#include <vector>

#include "s2s/gradcheck.hpp"
#include "s2s/mhp.hpp"
#include "s2s/mhv.hpp"
#include "s2s/ppc.hpp"
#include "s2s/rng.hpp"

namespace s2s::ad {

struct GradSuiteCase {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass() const { return max_rel_err < tolerance; }
};

namespace gradsuite_detail {

inline Tensor rand(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

template <class Fwd>
GradSuiteCase check(const std::string& name, std::vector<Tensor> inputs, Fwd fwd, double tol) {
  for (auto& t : inputs) t.set_requires_grad(true);
  auto res = finite_difference_check(inputs, [&] { return fwd().item(); }, fwd);
  return {name, res.max_rel_err, tol};
}

}  // namespace gradsuite_detail

inline std::vector<GradSuiteCase> run_grad_suite(uint64_t seed = 20240901) {
  using gradsuite_detail::check;
  using gradsuite_detail::rand;
  std::vector<GradSuiteCase> out;
  Rng rng(seed);
  const double op_tol = 1e-4;

  {
    Tensor x = rand({5, 3}, rng), w = rand({3, 4}, rng), b = rand({4}, rng);
    out.push_back(check("linear", {x, w, b}, [=] { return sum_all(linear(x, w, b)); }, op_tol));
  }
  {
    Tensor x = rand({4, 6}, rng);
    for (int64_t i = 0; i < x.numel(); ++i)
      if (std::abs(x.data()[i]) < 1e-3) x.data()[i] += 0.01;
    out.push_back(check("relu", {x}, [=] { return sum_all(relu(x)); }, op_tol));
  }
  {
    Tensor x = rand({4, 5}, rng), g = rand({5}, rng, 0.5, 1.5), b = rand({5}, rng);
    Tensor mix = rand({5, 1}, rng);
    Tensor mb({1});
    out.push_back(check("channel_norm", {x, g, b},
                        [=] { return sum_all(linear(channel_norm(x, g, b, 1e-5), mix, mb)); },
                        op_tol));
  }
  {
    Tensor x = rand({8, 3}, rng);
    for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] += 0.002 * static_cast<double>(i);
    IndexArray seg = {0, 1, 2, 0, 1, 2, 0, 1};
    out.push_back(check("segment_max", {x}, [=] { return sum_all(segment_max(x, seg, 3)); }, op_tol));
  }
  {
    Tensor x = rand({8, 3}, rng);
    IndexArray seg = {0, 1, 1, 0, 2, 2, 0, 2};
    Tensor mix = rand({3, 1}, rng);
    Tensor mb({1});
    out.push_back(check("segment_mean", {x},
                        [=] { return sum_all(linear(segment_mean(x, seg, 3), mix, mb)); }, op_tol));
  }
  {
    Tensor x = rand({5, 4}, rng);
    IndexArray idx = {0, 2, 2, 4, 1, 0, 3};
    Tensor mix = rand({4, 1}, rng);
    Tensor mb({1});
    out.push_back(check("gather_rows", {x},
                        [=] { return sum_all(linear(gather_rows(x, idx), mix, mb)); }, op_tol));
  }
  {
    Tensor a = rand({4, 2}, rng), b = rand({4, 3}, rng);
    Tensor mix = rand({5, 1}, rng);
    Tensor mb({1});
    out.push_back(check("concat_cols", {a, b},
                        [=] { return sum_all(linear(concat_cols({a, b}), mix, mb)); }, op_tol));
  }
  {
    Tensor x = rand({5, 3}, rng, 0.2, 1.0);
    Tensor mix = rand({3, 1}, rng);
    Tensor mb({1});
    out.push_back(check("l2_normalize_rows", {x},
                        [=] { return sum_all(linear(l2_normalize_rows(x), mix, mb)); }, op_tol));
  }
  {
    Tensor x = rand({6, 4}, rng, -2.0, 2.0);
    IndexArray targets = {0, 3, 1, 2, 0, 1};
    out.push_back(check("softmax_cross_entropy", {x},
                        [=] { return softmax_cross_entropy(x, targets); }, op_tol));
  }
  {
    Tensor a = rand({4, 3}, rng), b = rand({5, 3}, rng);
    out.push_back(check("matmul_nt", {a, b}, [=] { return sum_all(matmul_nt(a, b)); }, op_tol));
  }
  {
    Tensor a = rand({3, 3}, rng), b = rand({3, 3}, rng);
    out.push_back(check("add_scale", {a, b}, [=] { return sum_all(add(scale(a, 1.7), b)); }, op_tol));
  }
  {
    Rng gr(seed + 1);
    std::vector<geom::Vec3> src(5), dst(9);
    for (auto& p : src) p = {gr.uniform(-1, 1), gr.uniform(-1, 1), gr.uniform(-1, 1)};
    for (auto& p : dst) p = {gr.uniform(-1, 1), gr.uniform(-1, 1), gr.uniform(-1, 1)};
    Tensor f = rand({5, 3}, rng);
    Tensor mix = rand({3, 1}, rng);
    Tensor mb({1});
    out.push_back(check("nn_interpolate", {f},
                        [=] { return sum_all(linear(geom::nn_interpolate(src, f, dst), mix, mb)); },
                        op_tol));
  }
  {
    Tensor z1 = rand({6, 4}, rng), z2 = rand({6, 4}, rng);
    train::PPCConfig cfg;
    cfg.ns = 6;
    cfg.tau = 0.3;
    out.push_back(check("ppc_loss", {z1, z2}, [=] { return train::ppc_loss(z1, z2, cfg); }, op_tol));
  }

  // one full point module, N = 32, k = 4
  {
    Rng nr(seed + 2);
    mhp::NetConfig cfg;
    cfg.modules = {{2, {6}, 4}};
    cfg.head_hidden = 8;
    cfg.embed_dim = 4;
    mhp::Net net = mhp::make_net(cfg, nr);
    Rng cr(seed + 3);
    geom::PointCloud cloud;
    cloud.positions.resize(32);
    for (auto& p : cloud.positions)
      p = {cr.uniform(-1, 1), cr.uniform(-1, 1), cr.uniform(-1, 1)};
    Tensor mix = rand({6, 1}, rng);
    Tensor mb({1});
    auto fwd = [&net, &cloud, mix, mb] {
      Tensor feats = geom::positions_tensor(cloud.positions);
      auto mo = mhp::module_forward(cloud.positions, feats, net.modules[0]);
      return sum_all(linear(mo.x_s_h, mix, mb));
    };
    std::vector<Tensor> inputs;
    for (auto& p : net.store.params()) inputs.push_back(p.tensor);
    auto res = finite_difference_check(inputs, [&] { return fwd().item(); }, fwd);
    out.push_back({"mhp_module_n32_k4", res.max_rel_err, 1e-3});
  }

  // voxel pipeline on a 40-point toy scene
  {
    Rng nr(seed + 4);
    mhv::NetConfig cfg;
    cfg.scales = {2, 4};
    cfg.widths = {4, 4};
    cfg.conv_layers = 1;
    cfg.base_voxel_size = 0.2;
    cfg.head_hidden = 4;
    cfg.embed_dim = 2;
    mhv::Net net = mhv::make_net(cfg, nr);
    Rng cr(seed + 5);
    geom::PointCloud cloud;
    cloud.positions.resize(40);
    for (auto& p : cloud.positions)
      p = {cr.uniform(-1, 1), cr.uniform(-1, 1), cr.uniform(-1, 1)};
    Tensor mix = rand({2, 1}, rng);
    Tensor mb({1});
    auto fwd = [&net, &cloud, mix, mb] {
      return sum_all(linear(mhv::point_forward(net, cloud), mix, mb));
    };
    std::vector<Tensor> inputs;
    for (auto& p : net.store.params()) inputs.push_back(p.tensor);
    auto res = finite_difference_check(inputs, [&] { return fwd().item(); }, fwd);
    out.push_back({"mhv_pipeline_40pt", res.max_rel_err, 1e-3});
  }

  return out;
}

}  // namespace s2s::ad
