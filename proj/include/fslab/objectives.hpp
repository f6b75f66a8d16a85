#pragma once

#include <vector>

#include "fslab/rng.hpp"
#include "fslab/tensor.hpp"

namespace fslab {

// Linear classifier over a feature vector, with input dropout while training.
struct ClassificationHead {
  TensorPtr weight;  // [num_classes, feat_dim]
  TensorPtr bias;    // [num_classes]
  double dropout_p = 0.0;

  static ClassificationHead init(int num_classes, int feat_dim, Rng rng, double dropout_p = 0.0);
  TensorPtr forward(const TensorPtr& feat, Rng* dropout_rng = nullptr,
                    bool training = false) const;
  std::vector<TensorPtr> params() const { return {weight, bias}; }
  int num_classes() const { return weight->shape[0]; }
};

// Linear-ReLU-Linear projection, output L2-normalized.
struct ProjectionHead {
  TensorPtr w1;  // [hidden, feat_dim]
  TensorPtr b1;
  TensorPtr w2;  // [proj_dim, hidden]
  TensorPtr b2;

  static ProjectionHead init(int proj_dim, int hidden, int feat_dim, Rng rng);
  TensorPtr forward(const TensorPtr& feat) const;
  std::vector<TensorPtr> params() const { return {w1, b1, w2, b2}; }
  int proj_dim() const { return w2->shape[0]; }
};

// loss = -sum_c q_c log softmax(logits)_c with q_label = 1-eps and the
// remaining mass spread uniformly over the other classes.
TensorPtr cross_entropy_smoothed(const TensorPtr& logits, int label, double label_smoothing);

struct SupConBatch {
  TensorPtr projections;  // [batch, proj_dim], unit rows
  std::vector<int> labels;
  double temperature = 0.07;
};

// Supervised contrastive loss, averaged over anchors that have at least one
// positive; anchors without positives are excluded. The denominator set A(i)
// excludes the anchor itself unless include_self_in_denominator is set
// (ablation switch).
TensorPtr supcon_loss(const SupConBatch& batch, bool include_self_in_denominator = false);

// Same loss taken directly from a precomputed [batch, batch] similarity
// logits matrix (already divided by temperature).
TensorPtr supcon_loss_from_logits(const TensorPtr& logits, const std::vector<int>& labels,
                                  bool include_self_in_denominator = false);

TensorPtr hybrid_loss(const TensorPtr& ce, const TensorPtr& supcon, double lambda_t);

}  // namespace fslab
