#pragma once

// Point-point contrastive loss. Row k of z1 and row k of z2 are the two
// views of matched pair k; the similarity matrix over the sampled rows is
// scored with cross entropy against the diagonal, so every other sampled
// column acts as a negative. Strict mode removes same-mark columns from the
// denominator instead of treating them as negatives.

#include <vector>

#include "s2s/common.hpp"
#include "s2s/tensor.hpp"

namespace s2s::train {

struct PPCConfig {
  double tau = 0.07;       // temperature on the similarity logits
  int64_t ns = 4096;       // matched-pair subset size
  bool normalize = true;   // L2-normalize embeddings before the dot products
  bool strict_negatives = false;

  void validate() const {
    if (tau <= 0.0) throw ConfigError("ppc: tau must be positive");
    if (ns < 2) throw ConfigError("ppc: ns must be >= 2");
  }
};

inline ad::Tensor ppc_loss(const ad::Tensor& z1, const ad::Tensor& z2, const PPCConfig& cfg,
                           const ad::IndexArray* marks_u = nullptr,
                           const ad::IndexArray* marks_v = nullptr) {
  cfg.validate();
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols()) {
    throw ShapeError("ppc_loss: views disagree: " + shape_str(z1.shape()) + " vs " +
                     shape_str(z2.shape()));
  }
  const int64_t ns = z1.rows();
  ad::Tensor a = cfg.normalize ? ad::l2_normalize_rows(z1) : z1;
  ad::Tensor b = cfg.normalize ? ad::l2_normalize_rows(z2) : z2;
  ad::Tensor sim = ad::scale(ad::matmul_nt(a, b), 1.0 / cfg.tau);
  if (cfg.strict_negatives) {
    if (!marks_u || !marks_v) throw Error("ppc_loss: strict mode needs pair marks");
    if (static_cast<int64_t>(marks_u->size()) != ns || static_cast<int64_t>(marks_v->size()) != ns)
      throw ShapeError("ppc_loss: pair marks do not match the sampled rows");
    // exclude same-mark columns (other than the positive itself) from the softmax
    ad::Tensor mask({ns, ns});
    double* md = mask.data();
    for (int64_t k = 0; k < ns; ++k)
      for (int64_t j = 0; j < ns; ++j) {
        bool keep = j == k || (*marks_u)[static_cast<size_t>(k)] != (*marks_v)[static_cast<size_t>(j)];
        md[k * ns + j] = keep ? 0.0 : -1e30;
      }
    sim = ad::add(sim, mask);
  }
  ad::IndexArray diagonal(static_cast<size_t>(ns));
  for (int64_t k = 0; k < ns; ++k) diagonal[static_cast<size_t>(k)] = k;
  return ad::softmax_cross_entropy(sim, diagonal);
}

}  // namespace s2s::train
