#pragma once

#include <vector>

#include "fslab/tensor.hpp"

namespace fslab {

// Adaptive moments with decoupled weight decay. Decay is skipped for
// parameters registered with decay=false (biases, layer-norm terms);
// lr_scale gives a parameter group its own multiple of the scheduled rate.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void add_param(const TensorPtr& param, bool decay = true, double lr_scale = 1.0);
  void add_params(const std::vector<TensorPtr>& params, bool decay = true, double lr_scale = 1.0);
  const std::vector<TensorPtr>& params() const { return params_; }

  // Applies one update from the accumulated gradients; absent grads count
  // as zero. Does not clear gradients.
  void step(double lr);

  void zero_grads();
  double grad_norm() const;  // global L2 over registered parameters

 private:
  std::vector<TensorPtr> params_;
  std::vector<bool> decay_;
  std::vector<double> lr_scale_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int64_t t_ = 0;
};

}  // namespace fslab
