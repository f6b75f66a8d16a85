#include "fslab/lora.hpp"

#include <algorithm>
#include <set>

namespace fslab {

void LoraConfig::validate() const {
  if (rank < 1) throw ConfigError("lora: rank must be >= 1");
  if (alpha <= 0.0) throw ConfigError("lora: alpha must be > 0");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("lora: dropout must be in [0,1)");
  if (target_layers.empty()) throw ConfigError("lora: target layer list is empty");
}

const LoraAdapter* LoraSet::find(const std::string& layer_name) const {
  for (const auto& a : adapters) {
    if (a.layer_name == layer_name) return &a;
  }
  return nullptr;
}

std::vector<TensorPtr> LoraSet::trainable_params() const {
  std::vector<TensorPtr> out;
  for (const auto& a : adapters) {
    out.push_back(a.down);
    out.push_back(a.up);
  }
  return out;
}

int64_t LoraSet::trainable_param_count() const {
  int64_t total = 0;
  for (const auto& a : adapters) total += a.down->size() + a.up->size();
  return total;
}

LoraSet inject(const EncoderWeights& weights, const LoraConfig& config) {
  config.validate();
  const auto available = weights.adaptable_layers();

  std::set<std::string> matched;
  for (const auto& target : config.target_layers) {
    bool hit = false;
    for (const auto& layer : available) {
      if (layer.find(target) != std::string::npos) {
        matched.insert(layer);
        hit = true;
      }
    }
    if (!hit) {
      std::string names;
      for (const auto& layer : available) names += "\n  " + layer;
      throw ConfigError("lora: target '" + target + "' matches no adaptable layer; available:" +
                        names);
    }
  }

  LoraSet set;
  set.config = config;
  Rng root = Rng(config.init_seed).fork("lora-init");
  for (const auto& layer : matched) {
    auto base = weights.require(layer + ".weight");
    const int out_dim = base->shape[0];
    const int in_dim = base->shape[1];
    const int max_rank = std::min(out_dim, in_dim) / 2;
    if (config.rank > max_rank) {
      throw ConfigError("lora: rank " + std::to_string(config.rank) + " too large for layer " +
                        layer + " (" + std::to_string(out_dim) + "x" + std::to_string(in_dim) +
                        "); must be <= " + std::to_string(max_rank));
    }
    LoraAdapter adapter;
    adapter.layer_name = layer;
    adapter.base_weight = base;
    auto rng = root.fork(layer);
    std::vector<double> down(static_cast<size_t>(config.rank) * in_dim);
    for (auto& v : down) v = rng.normal(0.0, 0.02);
    adapter.down = Tensor::make({config.rank, in_dim}, std::move(down), /*requires_grad=*/true);
    adapter.up = Tensor::zeros({out_dim, config.rank}, /*requires_grad=*/true);
    adapter.scaling = config.alpha / static_cast<double>(config.rank);
    adapter.dropout_p = config.dropout_p;
    set.adapters.push_back(std::move(adapter));
  }
  return set;
}

TensorPtr lora_delta(const LoraAdapter& adapter, const TensorPtr& x, Rng* dropout_rng,
                     bool training) {
  TensorPtr h = x;
  if (training && adapter.dropout_p > 0.0) {
    if (!dropout_rng) throw ConfigError("lora: training forward needs a dropout rng");
    h = dropout(h, adapter.dropout_p, *dropout_rng, true);
  }
  return scale(linear(linear(h, adapter.down, nullptr), adapter.up, nullptr), adapter.scaling);
}

TensorPtr lora_forward(const LoraAdapter& adapter, const TensorPtr& x, Rng* dropout_rng,
                       bool training) {
  return add(linear(x, adapter.base_weight, nullptr),
             lora_delta(adapter, x, dropout_rng, training));
}

TensorPtr merge(const LoraAdapter& adapter) {
  const int out_dim = adapter.base_weight->shape[0];
  const int in_dim = adapter.base_weight->shape[1];
  const int rank = adapter.down->shape[0];
  std::vector<double> merged = adapter.base_weight->data;
  for (int j = 0; j < out_dim; ++j) {
    for (int r = 0; r < rank; ++r) {
      const double u = adapter.up->data[static_cast<size_t>(j) * rank + r] * adapter.scaling;
      if (u == 0.0) continue;
      for (int i = 0; i < in_dim; ++i) {
        merged[static_cast<size_t>(j) * in_dim + i] +=
            u * adapter.down->data[static_cast<size_t>(r) * in_dim + i];
      }
    }
  }
  return Tensor::make({out_dim, in_dim}, std::move(merged));
}

NamedTensors adapters_to_named(const LoraSet& set) {
  NamedTensors out;
  out.add("lora.config", Tensor::make({3}, {static_cast<double>(set.config.rank),
                                            set.config.alpha, set.config.dropout_p}));
  for (const auto& a : set.adapters) {
    out.add("lora." + a.layer_name + ".down", a.down);
    out.add("lora." + a.layer_name + ".up", a.up);
  }
  return out;
}

LoraSet adapters_from_named(const NamedTensors& tensors, const EncoderWeights& weights) {
  auto cfg_entry = tensors.require("lora.config");
  if (cfg_entry->size() != 3) throw DataError("lora checkpoint: bad config entry");
  LoraSet set;
  set.config.rank = static_cast<int>(cfg_entry->data[0]);
  set.config.alpha = cfg_entry->data[1];
  set.config.dropout_p = cfg_entry->data[2];

  const std::string prefix = "lora.";
  const std::string down_suffix = ".down";
  for (const auto& [name, tensor] : tensors.entries) {
    if (name.rfind(prefix, 0) != 0 || name.size() <= down_suffix.size()) continue;
    if (name.compare(name.size() - down_suffix.size(), down_suffix.size(), down_suffix) != 0) {
      continue;
    }
    const std::string layer =
        name.substr(prefix.size(), name.size() - prefix.size() - down_suffix.size());
    if (layer == "config") continue;
    auto base = weights.find(layer + ".weight");
    if (!base) throw DataError("lora checkpoint: encoder has no layer " + layer);
    auto up = tensors.require(prefix + layer + ".up");
    if (tensor->shape != Shape{set.config.rank, base->shape[1]} ||
        up->shape != Shape{base->shape[0], set.config.rank}) {
      throw DataError("lora checkpoint: adapter shapes for " + layer +
                      " do not match the encoder");
    }
    LoraAdapter adapter;
    adapter.layer_name = layer;
    adapter.base_weight = base;
    adapter.down = Tensor::make(tensor->shape, tensor->data, true);
    adapter.up = Tensor::make(up->shape, up->data, true);
    adapter.scaling = set.config.alpha / static_cast<double>(set.config.rank);
    adapter.dropout_p = set.config.dropout_p;
    set.config.target_layers.push_back(layer);
    set.adapters.push_back(std::move(adapter));
  }
  if (set.adapters.empty()) throw DataError("lora checkpoint: no adapters found");
  return set;
}

}  // namespace fslab
