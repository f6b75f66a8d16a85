#pragma once

#include <string>
#include <vector>

#include "fslab/checkpoint.hpp"
#include "fslab/encoder.hpp"
#include "fslab/rng.hpp"
#include "fslab/tensor.hpp"

namespace fslab {

struct LoraConfig {
  int rank = 4;
  double alpha = 8.0;  // effective update scale is alpha / rank
  double dropout_p = 0.1;
  uint64_t init_seed = 0;
  std::vector<std::string> target_layers;  // substring matches on layer names

  void validate() const;
};

// Rank-r update for one frozen linear layer: y = W0 x + (alpha/r) * up(down(x)).
// down starts Gaussian, up starts zero, so a fresh adapter is an exact
// identity on the forward pass.
struct LoraAdapter {
  std::string layer_name;
  TensorPtr base_weight;  // frozen W0, [out,in]
  TensorPtr down;         // [rank, in], trainable
  TensorPtr up;           // [out, rank], trainable
  double scaling = 1.0;
  double dropout_p = 0.0;
};

struct LoraSet {
  LoraConfig config;
  std::vector<LoraAdapter> adapters;  // ordered by layer name

  const LoraAdapter* find(const std::string& layer_name) const;
  std::vector<TensorPtr> trainable_params() const;
  int64_t trainable_param_count() const;
};

// Builds adapters for every encoder layer matched by the config targets.
LoraSet inject(const EncoderWeights& weights, const LoraConfig& config);

// The low-rank delta alone: (alpha/r) * up(down(x)), with dropout on x
// during training.
TensorPtr lora_delta(const LoraAdapter& adapter, const TensorPtr& x, Rng* dropout_rng = nullptr,
                     bool training = false);

// Full adapted forward W0 x + delta (no bias term).
TensorPtr lora_forward(const LoraAdapter& adapter, const TensorPtr& x, Rng* dropout_rng = nullptr,
                       bool training = false);

// W0 + (alpha/r) * up*down as a plain matrix; forward with the merged weight
// matches lora_forward.
TensorPtr merge(const LoraAdapter& adapter);

NamedTensors adapters_to_named(const LoraSet& set);
LoraSet adapters_from_named(const NamedTensors& tensors, const EncoderWeights& weights);

}  // namespace fslab
