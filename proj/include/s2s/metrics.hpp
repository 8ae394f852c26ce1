#pragma once

// Evaluation metrics and the serializable report they land in.
//   OA: fraction of correct predictions.
//   class mIoU: per-class intersection over union, averaged over classes
//   that occur at all (classes absent from both prediction and truth are
//   excluded from the mean).
//   instance mIoU: mean over shapes of the per-shape mean IoU over parts
//   present in that shape's prediction or ground truth.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2s/common.hpp"

namespace s2s::bench {

inline double overall_accuracy(const std::vector<int64_t>& pred, const std::vector<int64_t>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw ShapeError("overall_accuracy: size mismatch or empty input");
  int64_t hit = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

struct ClassIoU {
  std::vector<double> per_class;  // -1 marks classes absent from pred and truth
  double mean = 0.0;
};

inline ClassIoU class_iou(const std::vector<int64_t>& pred, const std::vector<int64_t>& truth,
                          int64_t num_classes) {
  if (pred.size() != truth.size() || pred.empty())
    throw ShapeError("class_iou: size mismatch or empty input");
  std::vector<int64_t> inter(static_cast<size_t>(num_classes), 0);
  std::vector<int64_t> uni(static_cast<size_t>(num_classes), 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    int64_t p = pred[i], t = truth[i];
    if (p < 0 || p >= num_classes || t < 0 || t >= num_classes)
      throw Error("class_iou: label out of range [0, " + std::to_string(num_classes) + ")");
    if (p == t) {
      inter[static_cast<size_t>(p)]++;
      uni[static_cast<size_t>(p)]++;
    } else {
      uni[static_cast<size_t>(p)]++;
      uni[static_cast<size_t>(t)]++;
    }
  }
  ClassIoU out;
  out.per_class.assign(static_cast<size_t>(num_classes), -1.0);
  double sum = 0.0;
  int64_t counted = 0;
  for (int64_t c = 0; c < num_classes; ++c) {
    if (uni[static_cast<size_t>(c)] == 0) continue;  // absent everywhere: excluded
    double iou = static_cast<double>(inter[static_cast<size_t>(c)]) /
                 static_cast<double>(uni[static_cast<size_t>(c)]);
    out.per_class[static_cast<size_t>(c)] = iou;
    sum += iou;
    ++counted;
  }
  if (counted == 0) throw Error("class_iou: no class present in prediction or truth");
  out.mean = sum / static_cast<double>(counted);
  return out;
}

// Mean over shapes of the per-shape mean IoU over parts present in that
// shape (in prediction or ground truth).
inline double instance_miou(const std::vector<std::vector<int64_t>>& preds,
                            const std::vector<std::vector<int64_t>>& truths, int64_t num_parts) {
  if (preds.size() != truths.size() || preds.empty())
    throw ShapeError("instance_miou: shape count mismatch or empty input");
  double total = 0.0;
  for (size_t s = 0; s < preds.size(); ++s) {
    total += class_iou(preds[s], truths[s], num_parts).mean;
  }
  return total / static_cast<double>(preds.size());
}

struct EvalReport {
  std::string task;
  std::string checkpoint_id;
  uint64_t config_hash = 0;
  double oa = -1.0;
  double baseline_oa = -1.0;   // random-init / from-scratch comparison, when run
  double cls_miou = -1.0;
  double inst_miou = -1.0;
  double baseline_miou = -1.0;
  std::vector<double> per_class;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["checkpoint_id"] = checkpoint_id;
    j["config_hash"] = config_hash;
    j["oa"] = oa;
    j["baseline_oa"] = baseline_oa;
    j["cls_miou"] = cls_miou;
    j["inst_miou"] = inst_miou;
    j["baseline_miou"] = baseline_miou;
    j["per_class"] = per_class;
    return j;
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    r.task = j.at("task").get<std::string>();
    r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<uint64_t>();
    r.oa = j.at("oa").get<double>();
    r.baseline_oa = j.at("baseline_oa").get<double>();
    r.cls_miou = j.at("cls_miou").get<double>();
    r.inst_miou = j.at("inst_miou").get<double>();
    r.baseline_miou = j.at("baseline_miou").get<double>();
    r.per_class = j.at("per_class").get<std::vector<double>>();
    return r;
  }
};

inline uint64_t fnv1a_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace s2s::bench
