#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fslab/data.hpp"
#include "fslab/encoder.hpp"
#include "fslab/lora.hpp"
#include "fslab/metrics.hpp"
#include "fslab/objectives.hpp"
#include "fslab/schedules.hpp"

namespace fslab {

enum class Strategy { Prototype, LinearProbe, LoraCe, LoraHybrid };
Strategy strategy_from_string(const std::string& s);
const char* strategy_name(Strategy s);

// Which pooled representation feeds the heads.
enum class FeatureSource { Pooled, Embedding };

// Per-class, per-template prior vectors standing in for text embeddings.
// file mode imports prompt-ensemble embeddings exported from an external
// model; heldout-proxy builds anchors from pool images disjoint from the
// episode's support and query.
struct TextPriorProvider {
  enum class Mode { None, File, HeldoutProxy };
  Mode mode = Mode::None;
  int dim = 0;
  std::map<int, std::vector<std::vector<double>>> vectors;

  static TextPriorProvider none();
  static TextPriorProvider from_file(const std::string& path);
  static TextPriorProvider heldout_proxy(const EncoderWeights& weights, const Pools& pools,
                                         const Episode& episode, int per_class, Rng rng);
  void save(const std::string& path) const;  // "fslab-emb v1" format
};

struct PrototypeSet {
  std::vector<int> class_ids;  // ascending
  std::vector<TensorPtr> image_protos;
  std::vector<TensorPtr> text_protos;  // empty when the provider has no priors
  std::vector<TensorPtr> hybrid_protos;
  double fusion_alpha = 0.0;
};

TensorPtr visual_prototype(const std::vector<TensorPtr>& embeddings);
TensorPtr textual_prototype(const TextPriorProvider& provider, int class_id);
TensorPtr hybrid_prototype(const TensorPtr& p_img, const TensorPtr& p_text, double fusion_alpha);
PrototypeSet build_prototypes(const EncoderWeights& weights, const Episode& episode,
                              const TextPriorProvider& provider, double fusion_alpha);
int classify_by_prototype(const TensorPtr& query_embedding, const PrototypeSet& prototypes);

struct TrainRunConfig {
  Strategy strategy = Strategy::LinearProbe;
  int n_shot = 5;
  int epochs = 15;
  int batch_size = 8;
  SamplerKind sampler = SamplerKind::Random;
  int classes_per_batch = 8;
  int instances_per_class = 3;
  double label_smoothing = 0.2;
  double dropout = 0.3;
  double weight_decay = 0.1;
  AugmentLevel augment = AugmentLevel::None;
  FeatureSource head_feature = FeatureSource::Pooled;
  int projection_dim = 128;
  int projection_hidden = 128;
  int eval_every = 1;
  // desk-scale heads want larger steps than the adapters they sit on
  double head_lr_scale = 1.0;
  LoraConfig lora;
  ScheduleSpec schedule;  // total_steps / warmup_steps derived from epochs
  double warmup_fraction = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

// Everything needed to score a query pool: either prototypes, or an encoder
// with optional adapters plus a classification head.
struct ModelBundle {
  const EncoderWeights* encoder = nullptr;
  const LoraSet* adapters = nullptr;
  const ClassificationHead* head = nullptr;
  FeatureSource feature_source = FeatureSource::Pooled;
  const PrototypeSet* prototypes = nullptr;
};

// Top-1 accuracy with the deterministic (no augmentation) input path.
double evaluate(const ModelBundle& bundle, const std::vector<LabeledImage>& query);

struct StepSnapshot {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
  double grad_norm = 0.0;
  const std::vector<TensorPtr>* trainable = nullptr;
};
using StepObserver = std::function<void(const StepSnapshot&)>;

MetricsRecord run_prototype_strategy(const EncoderWeights& weights, const Episode& episode,
                                     const TextPriorProvider& provider, double fusion_alpha);

struct TrainOutput {
  MetricsRecord metrics;
  ClassificationHead head;
  std::optional<ProjectionHead> projection;
  std::optional<LoraSet> adapters;
};

TrainOutput run_linear_probe(const EncoderWeights& weights, const Episode& episode,
                             const TrainRunConfig& config, const StepObserver& observer = {});
TrainOutput run_lora(const EncoderWeights& weights, const Episode& episode,
                     const TrainRunConfig& config, const StepObserver& observer = {});

struct CompactnessReport {
  double intra = 0.0;  // mean pairwise cosine distance within classes
  double inter = 0.0;  // mean pairwise cosine distance between class centroids
  double ratio = 0.0;
  std::vector<std::array<double, 3>> projection;  // x, y, class id
};
CompactnessReport compactness_report(const std::vector<std::vector<double>>& embeddings,
                                     const std::vector<int>& labels);

// Short supervised pass over a disjoint synthetic class set; trains the full
// encoder, then freezes it again. Seeded by the encoder's own seed.
struct WarmStartConfig {
  int classes = 6;
  int per_class = 16;
  int epochs = 2;
  int batch_size = 16;
  double lr = 2e-3;
  double weight_decay = 0.01;
  double label_smoothing = 0.1;
  int class_offset = 1000;
};
void warm_start_encoder(EncoderWeights& weights, const WarmStartConfig& config);

}  // namespace fslab
