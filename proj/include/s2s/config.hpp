#pragma once

// Single JSON config document for the CLI. Unknown keys anywhere are errors
// so typos fail instead of silently falling back to defaults.

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2s/common.hpp"
#include "s2s/geometry.hpp"
#include "s2s/mhp.hpp"
#include "s2s/mhv.hpp"
#include "s2s/ppc.hpp"
#include "s2s/trainer.hpp"

namespace s2s::bench {

struct Config {
  std::string arch = "mhp";
  std::string data;  // manifest path for commands that need a dataset
  mhp::NetConfig mhp_net;
  mhv::NetConfig mhv_net;
  train::TrainConfig train_cfg;
  train::PPCConfig ppc_cfg;
  geom::TransformConfig transform_cfg;
  nlohmann::json raw;  // snapshot for checkpoints and hashing
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
  }
}

inline void parse_net(const nlohmann::json& j, mhp::NetConfig& p, mhv::NetConfig& v) {
  reject_unknown(j, {"scales", "widths", "k", "conv_layers", "base_voxel_size", "head_hidden",
                     "embed_dim", "aux_dim"},
                 "net");
  std::vector<int> scales = j.value("scales", std::vector<int>{2, 4, 8, 16});
  std::vector<int64_t> widths = j.value("widths", std::vector<int64_t>{64, 128, 256, 512});
  if (scales.size() != widths.size())
    throw ConfigError("config: net.scales and net.widths must have the same length");
  int64_t k = j.value("k", int64_t{16});

  p.modules.clear();
  for (size_t i = 0; i < scales.size(); ++i) p.modules.push_back({scales[i], {widths[i]}, k});
  v.scales = scales;
  v.widths = widths;
  v.conv_layers = j.value("conv_layers", 2);
  v.base_voxel_size = j.value("base_voxel_size", 0.05);

  p.head_hidden = v.head_hidden = j.value("head_hidden", int64_t{256});
  p.embed_dim = v.embed_dim = j.value("embed_dim", int64_t{128});
  p.aux_dim = v.aux_dim = j.value("aux_dim", int64_t{0});
}

inline void parse_train(const nlohmann::json& j, train::TrainConfig& t) {
  reject_unknown(j, {"epochs", "batch_size", "lr0", "weight_decay", "lr_min", "seed", "m_shapes",
                     "level", "points_per_shape", "save_every"},
                 "train");
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr0 = j.value("lr0", t.lr0);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.lr_min = j.value("lr_min", t.lr_min);
  t.seed = j.value("seed", t.seed);
  t.m_shapes = j.value("m_shapes", t.m_shapes);
  t.level = train::parse_level(j.value("level", "shape"));
  t.points_per_shape = j.value("points_per_shape", t.points_per_shape);
  t.save_every = j.value("save_every", t.save_every);
}

inline void parse_ppc(const nlohmann::json& j, train::PPCConfig& p) {
  reject_unknown(j, {"tau", "ns", "normalize", "strict_negatives"}, "ppc");
  p.tau = j.value("tau", p.tau);
  p.ns = j.value("ns", p.ns);
  p.normalize = j.value("normalize", p.normalize);
  p.strict_negatives = j.value("strict_negatives", p.strict_negatives);
}

inline void parse_transforms(const nlohmann::json& j, geom::TransformConfig& t) {
  reject_unknown(j, {"zrot_max", "tilt", "shift", "scale_min", "scale_max"}, "transforms");
  t.zrot_max = j.value("zrot_max", t.zrot_max);
  t.tilt = j.value("tilt", t.tilt);
  t.shift = j.value("shift", t.shift);
  t.scale_min = j.value("scale_min", t.scale_min);
  t.scale_max = j.value("scale_max", t.scale_max);
}

}  // namespace detail

inline Config parse_config(const nlohmann::json& j) {
  detail::reject_unknown(j, {"arch", "data", "net", "train", "ppc", "transforms"}, "config root");
  Config cfg;
  cfg.raw = j;
  cfg.arch = j.value("arch", "mhp");
  if (cfg.arch != "mhp" && cfg.arch != "mhv")
    throw ConfigError("config: arch must be mhp or mhv, got '" + cfg.arch + "'");
  cfg.data = j.value("data", "");
  if (j.contains("net")) detail::parse_net(j.at("net"), cfg.mhp_net, cfg.mhv_net);
  if (j.contains("train")) detail::parse_train(j.at("train"), cfg.train_cfg);
  if (j.contains("ppc")) detail::parse_ppc(j.at("ppc"), cfg.ppc_cfg);
  if (j.contains("transforms")) detail::parse_transforms(j.at("transforms"), cfg.transform_cfg);
  if (cfg.arch == "mhp") cfg.mhp_net.validate();
  if (cfg.arch == "mhv") cfg.mhv_net.validate();
  cfg.train_cfg.validate();
  cfg.ppc_cfg.validate();
  cfg.transform_cfg.validate();
  if (cfg.arch == "mhp" && cfg.train_cfg.level == train::Level::region)
    throw ConfigError("config: region level requires arch mhv");
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: bad JSON in " + path + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace s2s::bench
