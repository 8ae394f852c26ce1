#pragma once

// Pre-training loop: synthesize a batch of pseudo scenes, embed both views,
// sample fresh matched pairs, apply the contrastive loss, and step AdamW
// under the cosine schedule. All randomness fans out from (seed, epoch,
// step, scene) so runs and resumed runs are bitwise reproducible.

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "s2s/checkpoint.hpp"
#include "s2s/geometry.hpp"
#include "s2s/mhp.hpp"
#include "s2s/mhv.hpp"
#include "s2s/optim.hpp"
#include "s2s/ppc.hpp"
#include "s2s/rng.hpp"
#include "s2s/s2ss.hpp"

namespace s2s::train {

enum class Level { shape, scene, region };

inline Level parse_level(const std::string& s) {
  if (s == "shape") return Level::shape;
  if (s == "scene") return Level::scene;
  if (s == "region") return Level::region;
  throw ConfigError("level must be shape, scene or region, got '" + s + "'");
}

inline const char* level_name(Level l) {
  switch (l) {
    case Level::shape: return "shape";
    case Level::scene: return "scene";
    default: return "region";
  }
}

struct TrainConfig {
  int64_t epochs = 30;
  int64_t batch_size = 2;
  double lr0 = 1e-3;
  double weight_decay = 0.05;
  double lr_min = 0.0;
  uint64_t seed = 0;
  int64_t m_shapes = 4;
  Level level = Level::shape;
  int64_t points_per_shape = 2048;
  int64_t save_every = 0;  // epochs between checkpoints; 0 = final only

  void validate() const {
    if (epochs < 1 || batch_size < 1 || m_shapes < 1 || points_per_shape < 1)
      throw ConfigError("train: epochs, batch_size, m_shapes, points_per_shape must be >= 1");
    if (!(lr0 > lr_min) || lr_min < 0.0)
      throw ConfigError("train: need lr0 > lr_min >= 0");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  }
};

struct EpochStats {
  int64_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

using MetricsSink = std::function<void(const EpochStats&)>;

// Embeddings for the two views of one scene plus the mark array each view's
// rows align with (point marks, or per-view voxel marks at region level).
struct StepEmbeddings {
  ad::Tensor z1, z2;
  ad::IndexArray marks1, marks2;
};

using SceneEmbedder = std::function<StepEmbeddings(const scene::PseudoScene&)>;

namespace detail {

constexpr uint64_t kSceneStream = 0x5ce9e5;

inline geom::PointCloud view_cloud(const std::vector<geom::Vec3>& positions) {
  geom::PointCloud c;
  c.positions = positions;
  return c;
}

struct StepPlan {
  int64_t steps_per_epoch = 0;
  int64_t total_steps = 0;
};

inline StepPlan plan_steps(int64_t dataset_size, const TrainConfig& cfg) {
  StepPlan p;
  int64_t scenes_per_epoch = std::max<int64_t>(1, dataset_size / cfg.m_shapes);
  p.steps_per_epoch = std::max<int64_t>(1, scenes_per_epoch / cfg.batch_size);
  p.total_steps = p.steps_per_epoch * cfg.epochs;
  return p;
}

}  // namespace detail

struct TrainProgress {
  std::vector<double> epoch_losses;
  int64_t global_step = 0;
};

// Core loop shared by both backbones. `params` are updated in place;
// `start_epoch` > 0 resumes a loaded state.
inline TrainProgress run_training(const std::vector<geom::PointCloud>& dataset,
                                  std::vector<nn::Parameter>& params, AdamW& opt,
                                  const SceneEmbedder& embed, const TrainConfig& tcfg,
                                  const PPCConfig& pcfg, const geom::TransformConfig& xcfg,
                                  const MetricsSink& sink = {}, int64_t start_epoch = 0) {
  tcfg.validate();
  pcfg.validate();
  if (dataset.empty()) throw Error("run_training: empty shape dataset");
  detail::StepPlan plan = detail::plan_steps(static_cast<int64_t>(dataset.size()), tcfg);

  scene::SceneConfig scfg;
  scfg.points_per_shape = tcfg.points_per_shape;

  TrainProgress progress;
  progress.global_step = start_epoch * plan.steps_per_epoch;

  for (int64_t epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    double lr = 0.0;
    for (int64_t step = 0; step < plan.steps_per_epoch; ++step) {
      lr = cosine_lr(progress.global_step, plan.total_steps, tcfg.lr0, tcfg.lr_min);
      for (auto& p : params) p.tensor.zero_grad();

      ad::Tape tape;
      double batch_loss;
      {
        ad::TapeScope scope(tape);
        std::vector<ad::Tensor> losses;
        for (int64_t i = 0; i < tcfg.batch_size; ++i) {
          Rng rng = Rng::derive(tcfg.seed, {detail::kSceneStream, static_cast<uint64_t>(epoch),
                                            static_cast<uint64_t>(step), static_cast<uint64_t>(i)});
          std::vector<const geom::PointCloud*> shapes;
          for (int64_t s = 0; s < tcfg.m_shapes; ++s)
            shapes.push_back(&dataset[static_cast<size_t>(rng.uniform_index(dataset.size()))]);
          scene::PseudoScene ps = scene::make_pseudo_scene(shapes, scfg, xcfg, rng);

          StepEmbeddings emb = embed(ps);
          uint64_t universe = scene::pair_universe_size(emb.marks1, emb.marks2);
          int64_t ns = std::min<int64_t>(pcfg.ns, static_cast<int64_t>(universe));
          scene::PairSet pairs = scene::sample_pairs(emb.marks1, emb.marks2, ns, rng);
          ad::Tensor z1 = ad::gather_rows(emb.z1, pairs.u);
          ad::Tensor z2 = ad::gather_rows(emb.z2, pairs.v);
          if (pcfg.strict_negatives) {
            ad::IndexArray mu(pairs.u.size()), mv(pairs.v.size());
            for (size_t k = 0; k < pairs.u.size(); ++k) {
              mu[k] = emb.marks1[static_cast<size_t>(pairs.u[k])];
              mv[k] = emb.marks2[static_cast<size_t>(pairs.v[k])];
            }
            losses.push_back(ppc_loss(z1, z2, pcfg, &mu, &mv));
          } else {
            losses.push_back(ppc_loss(z1, z2, pcfg));
          }
        }
        ad::Tensor total = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
        total = ad::scale(total, 1.0 / static_cast<double>(tcfg.batch_size));
        batch_loss = total.item();
        if (!std::isfinite(batch_loss)) {
          throw Error("run_training: non-finite loss " + std::to_string(batch_loss) + " at epoch " +
                      std::to_string(epoch) + ", step " + std::to_string(step));
        }
        tape.backward(total);
      }
      opt.step(params, lr, tcfg.weight_decay);
      loss_sum += batch_loss;
      ++progress.global_step;
    }
    double mean = loss_sum / static_cast<double>(plan.steps_per_epoch);
    progress.epoch_losses.push_back(mean);
    if (sink) {
      EpochStats st;
      st.epoch = epoch;
      st.mean_loss = mean;
      st.lr = lr;
      st.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      sink(st);
    }
  }
  return progress;
}

inline SceneEmbedder point_embedder(const mhp::Net& net) {
  return [&net](const scene::PseudoScene& ps) {
    StepEmbeddings e;
    e.z1 = mhp::point_forward(net, detail::view_cloud(ps.view1));
    e.z2 = mhp::point_forward(net, detail::view_cloud(ps.view2));
    e.marks1 = ps.shape_mark;
    e.marks2 = ps.shape_mark;
    return e;
  };
}

inline SceneEmbedder point_embedder(const mhv::Net& net) {
  return [&net](const scene::PseudoScene& ps) {
    StepEmbeddings e;
    e.z1 = mhv::point_forward(net, detail::view_cloud(ps.view1));
    e.z2 = mhv::point_forward(net, detail::view_cloud(ps.view2));
    e.marks1 = ps.shape_mark;
    e.marks2 = ps.shape_mark;
    return e;
  };
}

// Region level: each view voxelizes differently, so embeddings live at each
// view's scale-4 voxels and the marks are per-view majority marks.
inline SceneEmbedder region_embedder(const mhv::Net& net) {
  return [&net](const scene::PseudoScene& ps) {
    StepEmbeddings e;
    int scale4 = net.cfg.scales[net.cfg.scales.size() - 3];
    mhv::RegionOutput r1 = mhv::region_forward(net, detail::view_cloud(ps.view1));
    mhv::RegionOutput r2 = mhv::region_forward(net, detail::view_cloud(ps.view2));
    e.z1 = r1.embeddings;
    e.z2 = r2.embeddings;
    e.marks1 = mhv::voxel_majority_marks(r1.state.hierarchy, scale4, ps.shape_mark);
    e.marks2 = mhv::voxel_majority_marks(r2.state.hierarchy, scale4, ps.shape_mark);
    return e;
  };
}

inline SceneEmbedder make_embedder(const mhp::Net& net, Level level) {
  if (level == Level::region) throw ConfigError("region-level pre-training needs the voxel backbone");
  return point_embedder(net);
}

inline SceneEmbedder make_embedder(const mhv::Net& net, Level level) {
  return level == Level::region ? region_embedder(net) : point_embedder(net);
}

// Full pre-training entry point: fresh run or resume, periodic checkpoints,
// returns the final checkpoint.
template <class Net>
Checkpoint pretrain_run(const std::vector<geom::PointCloud>& dataset, Net& net, AdamW& opt,
                        const TrainConfig& tcfg, const PPCConfig& pcfg,
                        const geom::TransformConfig& xcfg, const std::string& arch,
                        nlohmann::json config_snapshot, const MetricsSink& sink = {},
                        int64_t start_epoch = 0, const std::string& checkpoint_path = {}) {
  SceneEmbedder embed = make_embedder(net, tcfg.level);
  detail::StepPlan plan = detail::plan_steps(static_cast<int64_t>(dataset.size()), tcfg);
  Checkpoint last;
  bool saved_final = false;
  MetricsSink wrapped = [&](const EpochStats& st) {
    if (sink) sink(st);
    bool final_epoch = st.epoch + 1 == tcfg.epochs;
    if (final_epoch || (tcfg.save_every > 0 && (st.epoch + 1) % tcfg.save_every == 0)) {
      last = make_checkpoint(arch, config_snapshot, net.store.params(), opt, st.epoch,
                             (st.epoch + 1) * plan.steps_per_epoch, tcfg.seed);
      if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, last);
      saved_final = final_epoch;
    }
  };
  run_training(dataset, net.store.params(), opt, embed, tcfg, pcfg, xcfg, wrapped, start_epoch);
  if (!saved_final) {  // only reachable when start_epoch already covers all epochs
    last = make_checkpoint(arch, config_snapshot, net.store.params(), opt, tcfg.epochs - 1,
                           plan.total_steps, tcfg.seed);
    if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, last);
  }
  return last;
}

}  // namespace s2s::train
