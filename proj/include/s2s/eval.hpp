#pragma once

// Downstream desk-scale evaluations: a linear probe over frozen global
// features, per-point part segmentation fine-tuning, and pseudo-scene
// semantic segmentation fine-tuning.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "s2s/dataset.hpp"
#include "s2s/metrics.hpp"
#include "s2s/mhp.hpp"
#include "s2s/mhv.hpp"
#include "s2s/optim.hpp"
#include "s2s/s2ss.hpp"
#include "s2s/tensor.hpp"
#include "s2s/trainer.hpp"

namespace s2s::bench {

struct ProbeConfig {
  int64_t epochs = 300;
  double lr = 0.05;
  uint64_t seed = 0;
};

namespace detail {

// Stack per-shape global features into one matrix (no tape: frozen backbone).
inline ad::Tensor frozen_global_features(const mhp::Net& net, const std::vector<LabeledShape>& shapes) {
  ad::Tensor first = mhp::global_feature(net, shapes.front().cloud);
  ad::Tensor all({static_cast<int64_t>(shapes.size()), first.cols()});
  std::copy(first.data(), first.data() + first.numel(), all.data());
  for (size_t i = 1; i < shapes.size(); ++i) {
    ad::Tensor f = mhp::global_feature(net, shapes[i].cloud);
    std::copy(f.data(), f.data() + f.numel(), all.data() + static_cast<int64_t>(i) * first.cols());
  }
  return all;
}

// Per-dimension standardization fitted on the training features.
inline void standardize(ad::Tensor& train, ad::Tensor& test) {
  const int64_t n = train.rows(), d = train.cols();
  for (int64_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += train.data()[i * d + c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double dv = train.data()[i * d + c] - mean;
      var += dv * dv;
    }
    double inv = 1.0 / std::sqrt(var / static_cast<double>(n) + 1e-8);
    for (int64_t i = 0; i < n; ++i) train.data()[i * d + c] = (train.data()[i * d + c] - mean) * inv;
    for (int64_t i = 0; i < test.rows(); ++i) test.data()[i * d + c] = (test.data()[i * d + c] - mean) * inv;
  }
}

inline std::vector<int64_t> argmax_rows(const ad::Tensor& logits) {
  std::vector<int64_t> out(static_cast<size_t>(logits.rows()));
  for (int64_t i = 0; i < logits.rows(); ++i) {
    int64_t best = 0;
    for (int64_t c = 1; c < logits.cols(); ++c)
      if (logits.data()[i * logits.cols() + c] > logits.data()[i * logits.cols() + best]) best = c;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace detail

// Trains a single linear layer on frozen global embeddings and reports OA
// on the test set. The backbone is never touched by the optimizer.
inline double run_linear_probe(const mhp::Net& net, const std::vector<LabeledShape>& train_set,
                               const std::vector<LabeledShape>& test_set, int64_t num_classes,
                               const ProbeConfig& cfg) {
  if (train_set.empty() || test_set.empty()) throw Error("run_linear_probe: empty split");
  ad::Tensor xtr = detail::frozen_global_features(net, train_set);
  ad::Tensor xte = detail::frozen_global_features(net, test_set);
  detail::standardize(xtr, xte);

  ad::IndexArray ytr;
  for (const auto& s : train_set) ytr.push_back(s.class_id);

  Rng rng = Rng::derive(cfg.seed, {0x9c0be});
  nn::ParamStore store;
  nn::Linear probe = nn::make_linear(store, "probe", xtr.cols(), num_classes, rng);
  train::AdamW opt(store.params());
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (auto& p : store.params()) p.tensor.zero_grad();
    ad::Tape tape;
    {
      ad::TapeScope scope(tape);
      ad::Tensor loss = ad::softmax_cross_entropy(probe(xtr), ytr);
      tape.backward(loss);
    }
    opt.step(store.params(), cfg.lr, 0.0);
  }

  std::vector<int64_t> pred = detail::argmax_rows(probe(xte));
  std::vector<int64_t> truth;
  for (const auto& s : test_set) truth.push_back(s.class_id);
  return overall_accuracy(pred, truth);
}

struct FineTuneConfig {
  int64_t epochs = 5;
  double lr = 1e-3;
  double weight_decay = 0.05;
  uint64_t seed = 0;
};

// Deterministic 80/20 split by index.
inline void split_dataset(const std::vector<LabeledShape>& all, std::vector<LabeledShape>& train,
                          std::vector<LabeledShape>& test) {
  for (size_t i = 0; i < all.size(); ++i) {
    if (i % 5 == 4)
      test.push_back(all[i]);
    else
      train.push_back(all[i]);
  }
  if (train.empty() || test.empty()) throw Error("split_dataset: dataset too small to split");
}

// Fine-tunes the whole net plus a fresh linear classifier over per-point
// embeddings; reports class and instance mIoU on the held-out split.
inline EvalReport part_segmentation_eval(mhp::Net& net, const std::vector<LabeledShape>& dataset,
                                         int64_t num_parts, const FineTuneConfig& cfg) {
  for (const auto& s : dataset) {
    if (s.part_labels.size() != s.cloud.positions.size())
      throw Error("part_segmentation_eval: dataset lacks per-point part labels");
  }
  std::vector<LabeledShape> train_set, test_set;
  split_dataset(dataset, train_set, test_set);

  Rng rng = Rng::derive(cfg.seed, {0x9a47});
  nn::ParamStore head_store;
  nn::Linear classifier = nn::make_linear(head_store, "partseg", net.cfg.embed_dim, num_parts, rng);
  std::vector<nn::Parameter> params = net.store.params();
  for (auto& p : head_store.params()) params.push_back(p);
  train::AdamW opt(params);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    Rng er = Rng::derive(cfg.seed, {0x0d3, static_cast<uint64_t>(epoch)});
    er.shuffle(order);
    for (int64_t idx : order) {
      const LabeledShape& s = train_set[static_cast<size_t>(idx)];
      ad::IndexArray targets(s.part_labels.begin(), s.part_labels.end());
      for (auto& p : params) p.tensor.zero_grad();
      ad::Tape tape;
      {
        ad::TapeScope scope(tape);
        ad::Tensor logits = classifier(mhp::point_forward(net, s.cloud));
        tape.backward(ad::softmax_cross_entropy(logits, targets));
      }
      opt.step(params, cfg.lr, cfg.weight_decay);
    }
  }

  std::vector<std::vector<int64_t>> preds, truths;
  std::vector<int64_t> flat_pred, flat_truth;
  for (const auto& s : test_set) {
    std::vector<int64_t> pred = detail::argmax_rows(classifier(mhp::point_forward(net, s.cloud)));
    std::vector<int64_t> truth(s.part_labels.begin(), s.part_labels.end());
    flat_pred.insert(flat_pred.end(), pred.begin(), pred.end());
    flat_truth.insert(flat_truth.end(), truth.begin(), truth.end());
    preds.push_back(std::move(pred));
    truths.push_back(std::move(truth));
  }
  EvalReport rep;
  rep.task = "part_segmentation";
  ClassIoU ci = class_iou(flat_pred, flat_truth, num_parts);
  rep.cls_miou = ci.mean;
  rep.per_class = ci.per_class;
  rep.inst_miou = instance_miou(preds, truths, num_parts);
  return rep;
}

struct LabeledScene {
  geom::PointCloud cloud;
  std::vector<int64_t> labels;  // per-point shape class
};

// Pseudo scenes whose per-point labels are the class of the source shape.
inline std::vector<LabeledScene> make_scene_set(const std::vector<LabeledShape>& shapes,
                                                int64_t n_scenes, int64_t m, int64_t points_per_shape,
                                                uint64_t seed) {
  std::vector<LabeledScene> out;
  scene::SceneConfig scfg;
  scfg.points_per_shape = points_per_shape;
  geom::TransformConfig xcfg;
  for (int64_t i = 0; i < n_scenes; ++i) {
    Rng rng = Rng::derive(seed, {0x5ce2e, static_cast<uint64_t>(i)});
    std::vector<const geom::PointCloud*> picks;
    std::vector<int64_t> classes;
    for (int64_t k = 0; k < m; ++k) {
      int64_t idx = static_cast<int64_t>(rng.uniform_index(shapes.size()));
      picks.push_back(&shapes[static_cast<size_t>(idx)].cloud);
      classes.push_back(shapes[static_cast<size_t>(idx)].class_id);
    }
    scene::PseudoScene ps = scene::make_pseudo_scene(picks, scfg, xcfg, rng);
    LabeledScene ls;
    ls.cloud.positions = ps.view1;
    ls.labels.reserve(ps.shape_mark.size());
    for (int64_t mk : ps.shape_mark) ls.labels.push_back(classes[static_cast<size_t>(mk)]);
    out.push_back(std::move(ls));
  }
  return out;
}

// Fine-tunes a per-point classifier over MH-V point embeddings and reports
// mIoU over shape classes on the held-out scenes.
inline double scene_segmentation_miou(mhv::Net& net, const std::vector<LabeledScene>& train_set,
                                      const std::vector<LabeledScene>& test_set, int64_t num_classes,
                                      const FineTuneConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, {0x5e65e9});
  nn::ParamStore head_store;
  nn::Linear classifier = nn::make_linear(head_store, "sceneseg", net.cfg.embed_dim, num_classes, rng);
  std::vector<nn::Parameter> params = net.store.params();
  for (auto& p : head_store.params()) params.push_back(p);
  train::AdamW opt(params);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    Rng er = Rng::derive(cfg.seed, {0x0d3, static_cast<uint64_t>(epoch)});
    er.shuffle(order);
    for (int64_t idx : order) {
      const LabeledScene& s = train_set[static_cast<size_t>(idx)];
      ad::IndexArray targets(s.labels.begin(), s.labels.end());
      for (auto& p : params) p.tensor.zero_grad();
      ad::Tape tape;
      {
        ad::TapeScope scope(tape);
        ad::Tensor logits = classifier(mhv::point_forward(net, s.cloud));
        tape.backward(ad::softmax_cross_entropy(logits, targets));
      }
      opt.step(params, cfg.lr, cfg.weight_decay);
    }
  }

  std::vector<int64_t> flat_pred, flat_truth;
  for (const auto& s : test_set) {
    std::vector<int64_t> pred = detail::argmax_rows(classifier(mhv::point_forward(net, s.cloud)));
    flat_pred.insert(flat_pred.end(), pred.begin(), pred.end());
    flat_truth.insert(flat_truth.end(), s.labels.begin(), s.labels.end());
  }
  return class_iou(flat_pred, flat_truth, num_classes).mean;
}

}  // namespace s2s::bench
