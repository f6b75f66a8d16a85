#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fslab/checkpoint.hpp"
#include "fslab/rng.hpp"
#include "fslab/tensor.hpp"

namespace fslab {

struct LoraSet;

// Miniature frozen ViT image encoder. Blocks follow the pre-LN layout
// (attention + MLP with mlp.c_fc / mlp.c_proj naming), CLS-token pooling,
// and an output projection onto the unit sphere.
struct EncoderConfig {
  int image_size = 32;
  int patch_size = 4;
  int d_model = 64;
  int num_blocks = 8;
  int num_heads = 4;
  int mlp_hidden = 256;
  int output_dim = 64;
  uint64_t seed = 0;

  void validate() const;
  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int num_tokens() const { return num_patches() + 1; }
  int patch_dim() const { return 3 * patch_size * patch_size; }
};

struct EncoderWeights {
  EncoderConfig config;
  std::vector<std::pair<std::string, TensorPtr>> named;  // creation order

  TensorPtr find(const std::string& name) const;
  TensorPtr require(const std::string& name) const;
  std::vector<TensorPtr> all_params() const;
  int64_t param_count() const;
  uint64_t checksum() const;  // FNV-1a over names and raw weight bytes
  void set_trainable(bool trainable);

  // Linear layers that accept adapters (the MLP c_fc / c_proj layers).
  std::vector<std::string> adaptable_layers() const;
};

// Deterministic initialization from config.seed: Gaussian std 0.02 for
// weights, ones/zeros for layer norms, all frozen.
EncoderWeights init_encoder(const EncoderConfig& config);

// Final layer-normed CLS token before the output projection (not normalized).
TensorPtr pooled_feature(const EncoderWeights& weights, const LoraSet* adapters,
                         const TensorPtr& image, Rng* dropout_rng = nullptr,
                         bool training = false);

// L2-normalized embedding after the output projection.
TensorPtr encode_image(const EncoderWeights& weights, const LoraSet* adapters,
                       const TensorPtr& image, Rng* dropout_rng = nullptr, bool training = false);

NamedTensors encoder_to_named(const EncoderWeights& weights, const std::string& prefix = "encoder.");
EncoderWeights encoder_from_named(const NamedTensors& tensors, const EncoderConfig& config,
                                  const std::string& prefix = "encoder.");

}  // namespace fslab
