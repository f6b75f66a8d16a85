#include "fslab/optim.hpp"

#include <cmath>

namespace fslab {

void AdamW::add_param(const TensorPtr& param, bool decay, double lr_scale) {
  params_.push_back(param);
  decay_.push_back(decay);
  lr_scale_.push_back(lr_scale);
  m_.emplace_back(param->data.size(), 0.0);
  v_.emplace_back(param->data.size(), 0.0);
}

void AdamW::add_params(const std::vector<TensorPtr>& params, bool decay, double lr_scale) {
  for (const auto& p : params) add_param(p, decay, lr_scale);
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    const double lr_k = lr * lr_scale_[k];
    const bool has_grad = p.has_grad();
    for (size_t i = 0; i < p.data.size(); ++i) {
      const double g = has_grad ? p.grad[i] : 0.0;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] -= lr_k * mhat / (std::sqrt(vhat) + eps);
      if (decay_[k]) p.data[i] -= lr_k * weight_decay * p.data[i];
    }
  }
}

void AdamW::zero_grads() { fslab::zero_grads(params_); }

double AdamW::grad_norm() const {
  double acc = 0.0;
  for (const auto& p : params_) {
    if (!p->has_grad()) continue;
    for (double g : p->grad) acc += g * g;
  }
  return std::sqrt(acc);
}

}  // namespace fslab
