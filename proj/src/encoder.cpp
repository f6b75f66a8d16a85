#include "fslab/encoder.hpp"

#include <cmath>
#include <cstring>

#include "fslab/lora.hpp"

namespace fslab {

void EncoderConfig::validate() const {
  if (image_size < 4 || patch_size < 1 || d_model < 2 || num_blocks < 1 || num_heads < 1 ||
      mlp_hidden < 1 || output_dim < 2) {
    throw ConfigError("encoder: all dimensions must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("encoder: image_size " + std::to_string(image_size) +
                      " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (d_model % num_heads != 0) {
    throw ConfigError("encoder: d_model " + std::to_string(d_model) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
}

namespace {

TensorPtr gaussian_weight(Shape shape, Rng rng) {
  std::vector<double> data(static_cast<size_t>(numel(shape)));
  for (auto& v : data) v = rng.normal(0.0, 0.02);
  return Tensor::make(std::move(shape), std::move(data));
}

}  // namespace

EncoderWeights init_encoder(const EncoderConfig& config) {
  config.validate();
  EncoderWeights weights;
  weights.config = config;
  Rng root = Rng(config.seed).fork("encoder-init");

  auto put_gaussian = [&](const std::string& name, Shape shape) {
    weights.named.emplace_back(name, gaussian_weight(std::move(shape), root.fork(name)));
  };
  auto put_const = [&](const std::string& name, Shape shape, double value) {
    weights.named.emplace_back(name, Tensor::full(std::move(shape), value));
  };

  const int d = config.d_model;
  put_gaussian("patch_embed.weight", {d, config.patch_dim()});
  put_const("patch_embed.bias", {d}, 0.0);
  put_gaussian("cls_token", {d});
  put_gaussian("pos_embed", {config.num_tokens(), d});
  for (int b = 0; b < config.num_blocks; ++b) {
    const std::string p = "block." + std::to_string(b) + ".";
    put_const(p + "ln1.gain", {d}, 1.0);
    put_const(p + "ln1.bias", {d}, 0.0);
    put_gaussian(p + "attn.qkv.weight", {3 * d, d});
    put_const(p + "attn.qkv.bias", {3 * d}, 0.0);
    put_gaussian(p + "attn.out.weight", {d, d});
    put_const(p + "attn.out.bias", {d}, 0.0);
    put_const(p + "ln2.gain", {d}, 1.0);
    put_const(p + "ln2.bias", {d}, 0.0);
    put_gaussian(p + "mlp.c_fc.weight", {config.mlp_hidden, d});
    put_const(p + "mlp.c_fc.bias", {config.mlp_hidden}, 0.0);
    put_gaussian(p + "mlp.c_proj.weight", {d, config.mlp_hidden});
    put_const(p + "mlp.c_proj.bias", {d}, 0.0);
  }
  put_const("ln_final.gain", {d}, 1.0);
  put_const("ln_final.bias", {d}, 0.0);
  put_gaussian("proj.weight", {config.output_dim, d});
  return weights;
}

TensorPtr EncoderWeights::find(const std::string& name) const {
  for (const auto& [n, t] : named) {
    if (n == name) return t;
  }
  return nullptr;
}

TensorPtr EncoderWeights::require(const std::string& name) const {
  auto t = find(name);
  if (!t) throw ConfigError("encoder: no weight named " + name);
  return t;
}

std::vector<TensorPtr> EncoderWeights::all_params() const {
  std::vector<TensorPtr> out;
  out.reserve(named.size());
  for (const auto& [n, t] : named) out.push_back(t);
  return out;
}

int64_t EncoderWeights::param_count() const {
  int64_t total = 0;
  for (const auto& [n, t] : named) total += t->size();
  return total;
}

uint64_t EncoderWeights::checksum() const {
  uint64_t h = 0xCBF29CE484222325ULL;
  auto eat = [&](const void* bytes, size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& [name, tensor] : named) {
    eat(name.data(), name.size());
    eat(tensor->data.data(), tensor->data.size() * sizeof(double));
  }
  return h;
}

void EncoderWeights::set_trainable(bool trainable) {
  for (auto& [name, tensor] : named) {
    tensor->requires_grad = trainable;
    if (!trainable) tensor->grad.clear();
  }
}

std::vector<std::string> EncoderWeights::adaptable_layers() const {
  std::vector<std::string> out;
  for (int b = 0; b < config.num_blocks; ++b) {
    out.push_back("block." + std::to_string(b) + ".mlp.c_fc");
    out.push_back("block." + std::to_string(b) + ".mlp.c_proj");
  }
  return out;
}

namespace {

// Linear layer forward with the layer's adapter applied when present.
TensorPtr adapted_linear(const EncoderWeights& weights, const LoraSet* adapters,
                         const std::string& layer, const TensorPtr& x, Rng* dropout_rng,
                         bool training) {
  auto y = linear(x, weights.require(layer + ".weight"), weights.find(layer + ".bias"));
  if (adapters) {
    if (const LoraAdapter* adapter = adapters->find(layer)) {
      y = add(y, lora_delta(*adapter, x, dropout_rng, training));
    }
  }
  return y;
}

TensorPtr attention(const EncoderWeights& weights, int block, const TensorPtr& x) {
  const auto& cfg = weights.config;
  const std::string p = "block." + std::to_string(block) + ".attn.";
  auto qkv = linear(x, weights.require(p + "qkv.weight"), weights.require(p + "qkv.bias"));
  const int d = cfg.d_model;
  const int dh = d / cfg.num_heads;
  std::vector<TensorPtr> heads;
  for (int h = 0; h < cfg.num_heads; ++h) {
    auto q = slice_cols(qkv, h * dh, dh);
    auto k = slice_cols(qkv, d + h * dh, dh);
    auto v = slice_cols(qkv, 2 * d + h * dh, dh);
    auto scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    heads.push_back(matmul(softmax(scores, -1), v));
  }
  auto merged = cfg.num_heads == 1 ? heads[0] : concat_cols(heads);
  return linear(merged, weights.require(p + "out.weight"), weights.require(p + "out.bias"));
}

TensorPtr extract_patches(const EncoderConfig& cfg, const TensorPtr& image) {
  const int side = cfg.patches_per_side();
  const int ps = cfg.patch_size;
  const int s = cfg.image_size;
  std::vector<double> out(static_cast<size_t>(cfg.num_patches()) * cfg.patch_dim());
  size_t w = 0;
  for (int gy = 0; gy < side; ++gy) {
    for (int gx = 0; gx < side; ++gx) {
      for (int c = 0; c < 3; ++c) {
        for (int py = 0; py < ps; ++py) {
          for (int px = 0; px < ps; ++px) {
            out[w++] = image->data[(static_cast<size_t>(c) * s + gy * ps + py) * s + gx * ps + px];
          }
        }
      }
    }
  }
  return Tensor::make({cfg.num_patches(), cfg.patch_dim()}, std::move(out));
}

TensorPtr encoder_trunk(const EncoderWeights& weights, const LoraSet* adapters,
                        const TensorPtr& image, Rng* dropout_rng, bool training) {
  const auto& cfg = weights.config;
  if (image->ndim() != 3 || image->shape[0] != 3 || image->shape[1] != cfg.image_size ||
      image->shape[2] != cfg.image_size) {
    throw ShapeError("encoder: image must be [3," + std::to_string(cfg.image_size) + "," +
                     std::to_string(cfg.image_size) + "], got " + shape_str(image->shape));
  }
  auto tokens = linear(extract_patches(cfg, image), weights.require("patch_embed.weight"),
                       weights.require("patch_embed.bias"));
  auto x = add(concat_rows({weights.require("cls_token"), tokens}), weights.require("pos_embed"));
  for (int b = 0; b < cfg.num_blocks; ++b) {
    const std::string p = "block." + std::to_string(b) + ".";
    auto h = layer_norm(x, weights.require(p + "ln1.gain"), weights.require(p + "ln1.bias"));
    x = add(x, attention(weights, b, h));
    auto h2 = layer_norm(x, weights.require(p + "ln2.gain"), weights.require(p + "ln2.bias"));
    auto fc = adapted_linear(weights, adapters, p + "mlp.c_fc", h2, dropout_rng, training);
    auto out = adapted_linear(weights, adapters, p + "mlp.c_proj", gelu(fc), dropout_rng, training);
    x = add(x, out);
  }
  return layer_norm(x, weights.require("ln_final.gain"), weights.require("ln_final.bias"));
}

}  // namespace

TensorPtr pooled_feature(const EncoderWeights& weights, const LoraSet* adapters,
                         const TensorPtr& image, Rng* dropout_rng, bool training) {
  return row(encoder_trunk(weights, adapters, image, dropout_rng, training), 0);
}

TensorPtr encode_image(const EncoderWeights& weights, const LoraSet* adapters,
                       const TensorPtr& image, Rng* dropout_rng, bool training) {
  auto pooled = pooled_feature(weights, adapters, image, dropout_rng, training);
  return l2_normalize(linear(pooled, weights.require("proj.weight"), nullptr));
}

NamedTensors encoder_to_named(const EncoderWeights& weights, const std::string& prefix) {
  NamedTensors out;
  const auto& c = weights.config;
  out.add(prefix + "config",
          Tensor::make({8}, {static_cast<double>(c.image_size), static_cast<double>(c.patch_size),
                             static_cast<double>(c.d_model), static_cast<double>(c.num_blocks),
                             static_cast<double>(c.num_heads), static_cast<double>(c.mlp_hidden),
                             static_cast<double>(c.output_dim), static_cast<double>(c.seed)}));
  for (const auto& [name, tensor] : weights.named) out.add(prefix + name, tensor);
  return out;
}

EncoderWeights encoder_from_named(const NamedTensors& tensors, const EncoderConfig& config,
                                  const std::string& prefix) {
  auto weights = init_encoder(config);
  for (auto& [name, tensor] : weights.named) {
    auto stored = tensors.require(prefix + name);
    if (stored->shape != tensor->shape) {
      throw DataError("checkpoint: shape mismatch for " + name + ": stored " +
                      shape_str(stored->shape) + " vs expected " + shape_str(tensor->shape));
    }
    tensor->data = stored->data;
    tensor->requires_grad = false;
    tensor->grad.clear();
  }
  return weights;
}

}  // namespace fslab
