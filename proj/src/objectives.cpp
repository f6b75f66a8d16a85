#include "fslab/objectives.hpp"

#include <cmath>
#include <string>

namespace fslab {

namespace {

TensorPtr gaussian(Shape shape, Rng& rng, double stddev) {
  std::vector<double> data(static_cast<size_t>(numel(shape)));
  for (auto& v : data) v = rng.normal(0.0, stddev);
  return Tensor::make(std::move(shape), std::move(data), /*requires_grad=*/true);
}

}  // namespace

ClassificationHead ClassificationHead::init(int num_classes, int feat_dim, Rng rng,
                                            double dropout_p) {
  if (num_classes < 2) throw ConfigError("classification head: need >= 2 classes");
  ClassificationHead head;
  head.weight = gaussian({num_classes, feat_dim}, rng, 0.02);
  head.bias = Tensor::zeros({num_classes}, /*requires_grad=*/true);
  head.dropout_p = dropout_p;
  return head;
}

TensorPtr ClassificationHead::forward(const TensorPtr& feat, Rng* dropout_rng,
                                      bool training) const {
  TensorPtr x = feat;
  if (training && dropout_p > 0.0) {
    if (!dropout_rng) throw ConfigError("classification head: training forward needs an rng");
    x = dropout(x, dropout_p, *dropout_rng, true);
  }
  return linear(x, weight, bias);
}

ProjectionHead ProjectionHead::init(int proj_dim, int hidden, int feat_dim, Rng rng) {
  if (proj_dim < 2 || hidden < 1) throw ConfigError("projection head: bad dimensions");
  ProjectionHead head;
  head.w1 = gaussian({hidden, feat_dim}, rng, 0.02);
  head.b1 = Tensor::zeros({hidden}, true);
  head.w2 = gaussian({proj_dim, hidden}, rng, 0.02);
  head.b2 = Tensor::zeros({proj_dim}, true);
  return head;
}

TensorPtr ProjectionHead::forward(const TensorPtr& feat) const {
  auto hidden = relu(linear(feat, w1, b1));
  return l2_normalize(linear(hidden, w2, b2));
}

TensorPtr cross_entropy_smoothed(const TensorPtr& logits, int label, double label_smoothing) {
  if (logits->ndim() != 1) {
    throw ShapeError("cross_entropy: logits must be 1-D, got " + shape_str(logits->shape));
  }
  const int classes = logits->shape[0];
  if (classes < 2) throw ShapeError("cross_entropy: need >= 2 classes");
  if (label < 0 || label >= classes) {
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(classes) + " classes");
  }
  if (label_smoothing < 0.0 || label_smoothing > 0.5) {
    throw ConfigError("cross_entropy: label smoothing must be in [0, 0.5]");
  }

  // fused stable log-softmax + smoothed NLL; d logits = softmax - q
  double mx = logits->data[0];
  for (double v : logits->data) mx = std::max(mx, v);
  double denom = 0.0;
  for (double v : logits->data) denom += std::exp(v - mx);
  const double log_denom = std::log(denom) + mx;

  auto target = std::make_shared<std::vector<double>>(classes, label_smoothing / (classes - 1));
  (*target)[label] = 1.0 - label_smoothing;

  double loss = 0.0;
  for (int c = 0; c < classes; ++c) loss -= (*target)[c] * (logits->data[c] - log_denom);

  std::vector<TensorPtr> parents{logits};
  auto out = Tensor::make({1}, {loss});
  if (grad_enabled() && logits->requires_grad) {
    out->requires_grad = true;
    out->op = "cross_entropy_smoothed";
    out->parents = parents;
    out->backward_fn = [logits, target, log_denom](Tensor& y) {
      logits->ensure_grad();
      const double g = y.grad[0];
      for (size_t c = 0; c < logits->data.size(); ++c) {
        const double p = std::exp(logits->data[c] - log_denom);
        logits->grad[c] += g * (p - (*target)[c]);
      }
    };
  } else {
    out->op = "cross_entropy_smoothed";
  }
  return out;
}

TensorPtr supcon_loss_from_logits(const TensorPtr& logits, const std::vector<int>& labels,
                                  bool include_self_in_denominator) {
  if (logits->ndim() != 2 || logits->shape[0] != logits->shape[1]) {
    throw ShapeError("supcon: logits must be square, got " + shape_str(logits->shape));
  }
  const int n = logits->shape[0];
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("supcon: labels length does not match batch size");
  }

  auto positives = std::make_shared<std::vector<std::vector<int>>>(n);
  std::vector<int> valid_anchors;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j != i && labels[j] == labels[i]) (*positives)[i].push_back(j);
    }
    if (!(*positives)[i].empty()) valid_anchors.push_back(i);
  }
  if (valid_anchors.empty()) {
    throw DegenerateBatchError(
        "supcon: no anchor has a positive; the sampler must guarantee >= 2 instances per class");
  }

  // log-denominator over A(i) with max subtraction, plus softmax weights
  // saved for the backward pass
  auto soft = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * n, 0.0);
  auto anchors = std::make_shared<std::vector<int>>(valid_anchors);
  double loss = 0.0;
  for (int i : valid_anchors) {
    const double* lrow = logits->data.data() + static_cast<size_t>(i) * n;
    double mx = -1e300;
    for (int j = 0; j < n; ++j) {
      if (j == i && !include_self_in_denominator) continue;
      mx = std::max(mx, lrow[j]);
    }
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i && !include_self_in_denominator) continue;
      denom += std::exp(lrow[j] - mx);
    }
    const double log_denom = std::log(denom) + mx;
    for (int j = 0; j < n; ++j) {
      if (j == i && !include_self_in_denominator) continue;
      (*soft)[static_cast<size_t>(i) * n + j] = std::exp(lrow[j] - log_denom);
    }
    const auto& pos = (*positives)[i];
    double anchor_term = 0.0;
    for (int p : pos) anchor_term += lrow[p] - log_denom;
    loss -= anchor_term / static_cast<double>(pos.size());
  }
  loss /= static_cast<double>(valid_anchors.size());

  auto out = Tensor::make({1}, {loss});
  out->op = "supcon";
  if (grad_enabled() && logits->requires_grad) {
    out->requires_grad = true;
    out->parents = {logits};
    out->backward_fn = [logits, positives, soft, anchors, n](Tensor& y) {
      logits->ensure_grad();
      const double g = y.grad[0] / static_cast<double>(anchors->size());
      for (int i : *anchors) {
        const auto& pos = (*positives)[i];
        const double inv_p = 1.0 / static_cast<double>(pos.size());
        double* drow = logits->grad.data() + static_cast<size_t>(i) * n;
        const double* srow = soft->data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) drow[j] += g * srow[j];
        for (int p : pos) drow[p] -= g * inv_p;
      }
    };
  }
  return out;
}

TensorPtr supcon_loss(const SupConBatch& batch, bool include_self_in_denominator) {
  const auto& z = batch.projections;
  if (!z || z->ndim() != 2) throw ShapeError("supcon: projections must be [batch, dim]");
  const int n = z->shape[0];
  const int d = z->shape[1];
  if (static_cast<int>(batch.labels.size()) != n) {
    throw ShapeError("supcon: labels length does not match batch size");
  }
  if (batch.temperature <= 0.0) throw ConfigError("supcon: temperature must be > 0");
  for (int i = 0; i < n; ++i) {
    double norm_sq = 0.0;
    for (int k = 0; k < d; ++k) {
      const double v = z->data[static_cast<size_t>(i) * d + k];
      norm_sq += v * v;
    }
    if (std::fabs(std::sqrt(norm_sq) - 1.0) > 1e-6) {
      throw NumericError("supcon: projection row " + std::to_string(i) + " is not unit-norm");
    }
  }
  auto logits = scale(matmul(z, transpose(z)), 1.0 / batch.temperature);
  return supcon_loss_from_logits(logits, batch.labels, include_self_in_denominator);
}

TensorPtr hybrid_loss(const TensorPtr& ce, const TensorPtr& supcon, double lambda_t) {
  if (lambda_t < 0.0) throw ConfigError("hybrid loss: lambda must be >= 0");
  return add(ce, scale(supcon, lambda_t));
}

}  // namespace fslab
