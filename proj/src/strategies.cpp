#include "fslab/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fslab/linalg.hpp"
#include "fslab/optim.hpp"

namespace fslab {

Strategy strategy_from_string(const std::string& s) {
  if (s == "prototype") return Strategy::Prototype;
  if (s == "linear_probe") return Strategy::LinearProbe;
  if (s == "lora_ce") return Strategy::LoraCe;
  if (s == "lora_hybrid") return Strategy::LoraHybrid;
  throw ConfigError("strategy must be prototype|linear_probe|lora_ce|lora_hybrid, got '" + s +
                    "'");
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Prototype: return "prototype";
    case Strategy::LinearProbe: return "linear_probe";
    case Strategy::LoraCe: return "lora_ce";
    default: return "lora_hybrid";
  }
}

// ---- text priors -------------------------------------------------------------

TextPriorProvider TextPriorProvider::none() { return {}; }

TextPriorProvider TextPriorProvider::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("priors: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("priors: empty file " + path);
  int dim = 0;
  if (std::sscanf(header.c_str(), "fslab-emb v1 D=%d", &dim) != 1 || dim < 2) {
    throw DataError("priors: bad header '" + header + "' (expected 'fslab-emb v1 D=<dim>')");
  }
  TextPriorProvider provider;
  provider.mode = Mode::File;
  provider.dim = dim;
  std::string line;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> values;
    while (std::getline(ss, field, ',')) {
      try {
        values.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw DataError("priors: non-numeric field on line " + std::to_string(line_no));
      }
    }
    if (static_cast<int>(values.size()) != dim + 2) {
      throw DataError("priors: line " + std::to_string(line_no) + " has " +
                      std::to_string(values.size() - 2) + " components, header says D=" +
                      std::to_string(dim));
    }
    const int class_id = static_cast<int>(values[0]);
    if (class_id < 0) throw DataError("priors: negative class id on line " + std::to_string(line_no));
    provider.vectors[class_id].emplace_back(values.begin() + 2, values.end());
  }
  if (provider.vectors.empty()) throw DataError("priors: no rows in " + path);
  const int max_class = provider.vectors.rbegin()->first;
  for (int c = 0; c <= max_class; ++c) {
    if (!provider.vectors.count(c)) {
      throw DataError("priors: missing class " + std::to_string(c) + " in " + path);
    }
  }
  return provider;
}

TextPriorProvider TextPriorProvider::heldout_proxy(const EncoderWeights& weights,
                                                   const Pools& pools, const Episode& episode,
                                                   int per_class, Rng rng) {
  if (per_class < 1) throw ConfigError("priors: per_class must be >= 1");
  std::set<std::string> support_ids;
  for (const auto& img : episode.support) support_ids.insert(img.source_id);

  std::map<int, std::vector<int>> candidates;
  for (size_t i = 0; i < pools.train_pool.size(); ++i) {
    const auto& img = pools.train_pool[i];
    if (!support_ids.count(img.source_id)) {
      candidates[img.class_id].push_back(static_cast<int>(i));
    }
  }

  TextPriorProvider provider;
  provider.mode = Mode::HeldoutProxy;
  provider.dim = weights.config.output_dim;
  NoGradScope no_grad;
  for (int class_id : episode.class_ids) {
    auto it = candidates.find(class_id);
    if (it == candidates.end() || it->second.empty()) {
      throw DataError("priors: class " + std::to_string(class_id) +
                      " has no held-out images outside the support set");
    }
    auto indices = it->second;
    rng.fork(static_cast<uint64_t>(class_id)).shuffle(indices);
    const int take = std::min<int>(per_class, static_cast<int>(indices.size()));
    for (int k = 0; k < take; ++k) {
      auto emb = encode_image(weights, nullptr, pools.train_pool[indices[k]].pixels);
      provider.vectors[class_id].push_back(emb->data);
    }
  }
  return provider;
}

void TextPriorProvider::save(const std::string& path) const {
  if (mode == Mode::None || vectors.empty()) throw DataError("priors: nothing to save");
  std::ofstream out(path);
  if (!out) throw DataError("priors: cannot open " + path + " for writing");
  out << "fslab-emb v1 D=" << dim << "\n";
  char buf[40];
  for (const auto& [class_id, rows] : vectors) {
    for (size_t t = 0; t < rows.size(); ++t) {
      out << class_id << "," << t;
      for (double v : rows[t]) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << "," << buf;
      }
      out << "\n";
    }
  }
  if (!out) throw DataError("priors: write failed for " + path);
}

// ---- prototypes ----------------------------------------------------------------

namespace {

void check_unit(const TensorPtr& v, const char* what) {
  double norm_sq = 0.0;
  for (double x : v->data) norm_sq += x * x;
  if (std::fabs(std::sqrt(norm_sq) - 1.0) > 1e-6) {
    throw NumericError(std::string(what) + ": expected a unit vector");
  }
}

TensorPtr normalized_mean(const std::vector<std::vector<double>>& rows) {
  const int width = static_cast<int>(rows[0].size());
  std::vector<double> acc(rows[0].size(), 0.0);
  for (const auto& r : rows) {
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += r[i];
  }
  for (auto& v : acc) v /= static_cast<double>(rows.size());
  return l2_normalize(Tensor::make({width}, std::move(acc)));
}

}  // namespace

TensorPtr visual_prototype(const std::vector<TensorPtr>& embeddings) {
  if (embeddings.empty()) throw DataError("visual prototype: no embeddings");
  std::vector<std::vector<double>> rows;
  for (const auto& e : embeddings) {
    check_unit(e, "visual prototype");
    rows.push_back(e->data);
  }
  return normalized_mean(rows);
}

TensorPtr textual_prototype(const TextPriorProvider& provider, int class_id) {
  if (provider.mode == TextPriorProvider::Mode::None) {
    throw DataError("textual prototype: provider has no priors (mode none)");
  }
  auto it = provider.vectors.find(class_id);
  if (it == provider.vectors.end() || it->second.empty()) {
    throw DataError("textual prototype: provider does not cover class " +
                    std::to_string(class_id));
  }
  return normalized_mean(it->second);
}

TensorPtr hybrid_prototype(const TensorPtr& p_img, const TensorPtr& p_text, double fusion_alpha) {
  if (fusion_alpha < 0.0 || fusion_alpha > 1.0) {
    throw ConfigError("hybrid prototype: fusion weight must be in [0,1]");
  }
  check_unit(p_img, "hybrid prototype (image)");
  if (fusion_alpha == 0.0) return p_img;
  check_unit(p_text, "hybrid prototype (text)");
  if (fusion_alpha == 1.0) return p_text;
  if (p_img->shape != p_text->shape) {
    throw ShapeError("hybrid prototype: width mismatch " + shape_str(p_img->shape) + " vs " +
                     shape_str(p_text->shape));
  }
  std::vector<double> mix(p_img->data.size());
  for (size_t i = 0; i < mix.size(); ++i) {
    mix[i] = (1.0 - fusion_alpha) * p_img->data[i] + fusion_alpha * p_text->data[i];
  }
  return l2_normalize(Tensor::make(p_img->shape, std::move(mix)));
}

PrototypeSet build_prototypes(const EncoderWeights& weights, const Episode& episode,
                              const TextPriorProvider& provider, double fusion_alpha) {
  NoGradScope no_grad;
  std::map<int, std::vector<TensorPtr>> by_class;
  for (const auto& img : episode.support) {
    by_class[img.class_id].push_back(encode_image(weights, nullptr, img.pixels));
  }
  PrototypeSet set;
  set.fusion_alpha = fusion_alpha;
  const bool with_text = provider.mode != TextPriorProvider::Mode::None;
  for (const auto& [class_id, embeddings] : by_class) {
    set.class_ids.push_back(class_id);
    auto p_img = visual_prototype(embeddings);
    set.image_protos.push_back(p_img);
    if (with_text) {
      auto p_text = textual_prototype(provider, class_id);
      set.text_protos.push_back(p_text);
      set.hybrid_protos.push_back(hybrid_prototype(p_img, p_text, fusion_alpha));
    } else {
      if (fusion_alpha > 0.0) {
        throw DataError("prototypes: fusion weight > 0 requires text priors");
      }
      set.hybrid_protos.push_back(p_img);
    }
  }
  return set;
}

int classify_by_prototype(const TensorPtr& query_embedding, const PrototypeSet& prototypes) {
  if (prototypes.hybrid_protos.empty()) throw DataError("classify: empty prototype set");
  int best = -1;
  double best_sim = -2.0;
  for (size_t k = 0; k < prototypes.hybrid_protos.size(); ++k) {
    const auto& proto = prototypes.hybrid_protos[k];
    if (proto->shape != query_embedding->shape) {
      throw ShapeError("classify: prototype width " + shape_str(proto->shape) +
                       " does not match query " + shape_str(query_embedding->shape));
    }
    double sim = 0.0;
    for (size_t i = 0; i < proto->data.size(); ++i) {
      sim += proto->data[i] * query_embedding->data[i];
    }
    if (sim > best_sim) {  // ties keep the lowest class id
      best_sim = sim;
      best = prototypes.class_ids[k];
    }
  }
  return best;
}

// ---- evaluation -----------------------------------------------------------------

namespace {

TensorPtr bundle_feature(const EncoderWeights& weights, const LoraSet* adapters,
                         const TensorPtr& pixels, FeatureSource source) {
  auto image = resize_image(pixels, weights.config.image_size);
  return source == FeatureSource::Pooled ? pooled_feature(weights, adapters, image)
                                         : encode_image(weights, adapters, image);
}

int argmax_index(const std::vector<double>& values) {
  int best = 0;
  for (size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace

double evaluate(const ModelBundle& bundle, const std::vector<LabeledImage>& query) {
  if (query.empty()) throw DataError("evaluate: empty query pool");
  NoGradScope no_grad;
  int correct = 0;
  if (bundle.prototypes) {
    if (!bundle.encoder) throw ConfigError("evaluate: prototype bundle needs an encoder");
    for (const auto& img : query) {
      auto emb = encode_image(*bundle.encoder, bundle.adapters,
                              resize_image(img.pixels, bundle.encoder->config.image_size));
      correct += classify_by_prototype(emb, *bundle.prototypes) == img.class_id;
    }
  } else {
    if (!bundle.encoder || !bundle.head) throw ConfigError("evaluate: bundle needs encoder+head");
    for (const auto& img : query) {
      auto feat = bundle_feature(*bundle.encoder, bundle.adapters, img.pixels,
                                 bundle.feature_source);
      auto logits = bundle.head->forward(feat);
      correct += argmax_index(logits->data) == img.class_id;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(query.size());
}

// ---- strategies -----------------------------------------------------------------

MetricsRecord run_prototype_strategy(const EncoderWeights& weights, const Episode& episode,
                                     const TextPriorProvider& provider, double fusion_alpha) {
  const auto start = std::chrono::steady_clock::now();
  auto prototypes = build_prototypes(weights, episode, provider, fusion_alpha);
  ModelBundle bundle;
  bundle.encoder = &weights;
  bundle.prototypes = &prototypes;
  MetricsRecord record;
  record.strategy = strategy_name(Strategy::Prototype);
  record.n_shot = episode.n_shot;
  record.final_accuracy = evaluate(bundle, episode.query);
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

void TrainRunConfig::validate() const {
  if (n_shot < 1) throw ConfigError("run: n_shot must be >= 1");
  if (epochs < 0) throw ConfigError("run: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("run: batch_size must be >= 1");
  if (eval_every < 1) throw ConfigError("run: eval_every must be >= 1");
  if (label_smoothing < 0.0 || label_smoothing > 0.5) {
    throw ConfigError("run: label_smoothing must be in [0, 0.5]");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("run: dropout must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("run: weight_decay must be >= 0");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) {
    throw ConfigError("run: warmup_fraction must be in [0,1)");
  }
  if (strategy == Strategy::LoraHybrid && sampler != SamplerKind::Stratified) {
    throw ConfigError(
        "run: lora_hybrid requires the stratified sampler; random batches cannot guarantee "
        "positive pairs for the contrastive loss");
  }
  if (projection_dim < 2 || projection_hidden < 1) {
    throw ConfigError("run: projection head dimensions must be positive");
  }
  if (head_lr_scale <= 0.0) throw ConfigError("run: head_lr_scale must be > 0");
}

namespace {

struct TrainContext {
  const EncoderWeights& weights;
  const Episode& episode;
  const TrainRunConfig& config;
  std::vector<int> labels;          // support labels
  std::map<int, int> class_to_dense;
  std::vector<int> dense_labels;    // dense 0..C-1 for heads
  int num_classes = 0;
  int feat_dim = 0;
};

TrainContext make_context(const EncoderWeights& weights, const Episode& episode,
                          const TrainRunConfig& config) {
  TrainContext ctx{weights, episode, config, {}, {}, {}, 0, 0};
  for (const auto& img : episode.support) ctx.labels.push_back(img.class_id);
  std::set<int> classes(ctx.labels.begin(), ctx.labels.end());
  for (int c : classes) {
    const int dense = static_cast<int>(ctx.class_to_dense.size());
    ctx.class_to_dense[c] = dense;
  }
  for (int c : ctx.labels) ctx.dense_labels.push_back(ctx.class_to_dense.at(c));
  ctx.num_classes = static_cast<int>(classes.size());
  ctx.feat_dim = config.head_feature == FeatureSource::Pooled ? weights.config.d_model
                                                              : weights.config.output_dim;
  return ctx;
}

// Dense-label view of a query pool for head-based evaluation.
std::vector<LabeledImage> dense_query(const TrainContext& ctx) {
  std::vector<LabeledImage> out = ctx.episode.query;
  for (auto& img : out) {
    auto it = ctx.class_to_dense.find(img.class_id);
    img.class_id = it == ctx.class_to_dense.end() ? -1 : it->second;
  }
  return out;
}

BatchPlan plan_for_epoch(const TrainContext& ctx, Rng& batch_rng, int epoch) {
  if (ctx.config.sampler == SamplerKind::Stratified) {
    const int cpb = std::min(ctx.config.classes_per_batch, ctx.num_classes);
    return stratified_batches(ctx.labels, cpb, ctx.config.instances_per_class,
                              batch_rng.fork(static_cast<uint64_t>(epoch)));
  }
  return random_batches(static_cast<int>(ctx.labels.size()), ctx.config.batch_size,
                        batch_rng.fork(static_cast<uint64_t>(epoch)));
}

int steps_per_epoch(const TrainContext& ctx) {
  const int n = static_cast<int>(ctx.labels.size());
  if (ctx.config.sampler == SamplerKind::Stratified) {
    const int cpb = std::min(ctx.config.classes_per_batch, ctx.num_classes);
    const int bs = cpb * ctx.config.instances_per_class;
    return (n + bs - 1) / bs;
  }
  return (n + ctx.config.batch_size - 1) / ctx.config.batch_size;
}

ScheduleSpec resolve_schedule(const TrainRunConfig& config, int total_steps) {
  ScheduleSpec spec = config.schedule;
  spec.total_steps = std::max(total_steps, 1);
  spec.warmup_steps = static_cast<int>(config.warmup_fraction * spec.total_steps);
  if (spec.warmup_steps >= spec.total_steps) spec.warmup_steps = spec.total_steps - 1;
  spec.validate();
  return spec;
}

}  // namespace

TrainOutput run_linear_probe(const EncoderWeights& weights, const Episode& episode,
                             const TrainRunConfig& config, const StepObserver& observer) {
  config.validate();
  if (config.strategy != Strategy::LinearProbe) {
    throw ConfigError("run_linear_probe: config strategy is not linear_probe");
  }
  const auto start = std::chrono::steady_clock::now();
  auto ctx = make_context(weights, episode, config);

  Rng root(config.seed);
  auto batch_rng = root.fork("batches");
  auto aug_rng = root.fork("augment");
  auto drop_rng = root.fork("dropout");

  TrainOutput out;
  out.head = ClassificationHead::init(ctx.num_classes, ctx.feat_dim, root.fork("init.head"),
                                      config.dropout);

  AdamW opt;
  opt.weight_decay = config.weight_decay;
  opt.add_param(out.head.weight, true, config.head_lr_scale);
  opt.add_param(out.head.bias, false, config.head_lr_scale);
  std::vector<TensorPtr> trainable = out.head.params();

  const int per_epoch = steps_per_epoch(ctx);
  const int total_steps = config.epochs * per_epoch;
  ScheduleSpec spec = resolve_schedule(config, total_steps);

  // the frozen encoder makes clean-path features reusable across epochs
  std::vector<TensorPtr> feature_cache(episode.support.size());
  auto support_feature = [&](int index) {
    if (config.augment == AugmentLevel::None) {
      if (!feature_cache[index]) {
        NoGradScope no_grad;
        feature_cache[index] = bundle_feature(weights, nullptr,
                                              episode.support[index].pixels, config.head_feature);
      }
      return feature_cache[index];
    }
    auto img = augment(episode.support[index], config.augment, aug_rng);
    NoGradScope no_grad;
    return bundle_feature(weights, nullptr, img.pixels, config.head_feature);
  };

  auto query = dense_query(ctx);

  // query features are fixed under a frozen encoder: encode once, score the
  // head against the cache on every evaluation
  std::vector<TensorPtr> query_features;
  auto eval_cached = [&] {
    NoGradScope no_grad;
    if (query_features.empty()) {
      query_features.reserve(query.size());
      for (const auto& img : query) {
        query_features.push_back(bundle_feature(weights, nullptr, img.pixels,
                                                config.head_feature));
      }
    }
    int correct = 0;
    for (size_t q = 0; q < query.size(); ++q) {
      correct += argmax_index(out.head.forward(query_features[q])->data) == query[q].class_id;
    }
    return static_cast<double>(correct) / static_cast<double>(query.size());
  };

  out.metrics.strategy = strategy_name(config.strategy);
  out.metrics.n_shot = episode.n_shot;
  out.metrics.seed = config.seed;

  int step = 0;
  double last_test_acc = -1.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto plan = plan_for_epoch(ctx, batch_rng, epoch);
    double loss_sum = 0.0;
    double grad_sum = 0.0;
    int correct = 0, seen = 0;
    double lr_now = 0.0;
    for (const auto& batch : plan.batches) {
      lr_now = lr_at(spec, step);
      std::vector<TensorPtr> losses;
      for (int index : batch) {
        auto feat = support_feature(index);
        auto logits = out.head.forward(feat, &drop_rng, true);
        losses.push_back(cross_entropy_smoothed(logits, ctx.dense_labels[index],
                                                config.label_smoothing));
        correct += argmax_index(logits->data) == ctx.dense_labels[index];
        ++seen;
      }
      auto total = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
      total = scale(total, 1.0 / static_cast<double>(losses.size()));
      if (!std::isfinite(total->value())) {
        throw NumericError("probe: non-finite loss at step " + std::to_string(step) +
                           " (lr=" + format_double(lr_now) + ")");
      }
      zero_grads(trainable);
      backward(total);
      const double gnorm = opt.grad_norm();
      opt.step(lr_now);
      loss_sum += total->value();
      grad_sum += gnorm;
      if (observer) {
        StepSnapshot snap{step, total->value(), lr_now, 0.0, 0.0, gnorm, &trainable};
        observer(snap);
      }
      ++step;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(plan.batches.size());
    stats.train_acc = seen ? static_cast<double>(correct) / seen : 0.0;
    const bool do_eval = (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs;
    if (do_eval || last_test_acc < 0.0) last_test_acc = eval_cached();
    stats.test_acc = last_test_acc;
    stats.lr = lr_now;
    stats.tau = 0.0;
    stats.lambda = 0.0;
    stats.grad_norm = grad_sum / static_cast<double>(plan.batches.size());
    out.metrics.epochs.push_back(stats);
  }

  out.metrics.final_accuracy = last_test_acc >= 0.0 ? last_test_acc : eval_cached();
  out.metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

TrainOutput run_lora(const EncoderWeights& weights, const Episode& episode,
                     const TrainRunConfig& config, const StepObserver& observer) {
  config.validate();
  if (config.strategy != Strategy::LoraCe && config.strategy != Strategy::LoraHybrid) {
    throw ConfigError("run_lora: config strategy is not lora_ce or lora_hybrid");
  }
  const bool hybrid = config.strategy == Strategy::LoraHybrid;
  const auto start = std::chrono::steady_clock::now();
  auto ctx = make_context(weights, episode, config);

  Rng root(config.seed);
  auto batch_rng = root.fork("batches");
  auto aug_rng = root.fork("augment");
  auto drop_rng = root.fork("dropout");

  TrainOutput out;
  out.adapters = inject(weights, config.lora);
  out.head = ClassificationHead::init(ctx.num_classes, ctx.feat_dim, root.fork("init.head"),
                                      config.dropout);
  if (hybrid) {
    out.projection = ProjectionHead::init(config.projection_dim, config.projection_hidden,
                                          ctx.feat_dim, root.fork("init.proj"));
  }

  AdamW opt;
  opt.weight_decay = config.weight_decay;
  for (auto& adapter : out.adapters->adapters) {
    opt.add_param(adapter.down, true);
    opt.add_param(adapter.up, true);
  }
  opt.add_param(out.head.weight, true, config.head_lr_scale);
  opt.add_param(out.head.bias, false, config.head_lr_scale);
  if (out.projection) {
    opt.add_param(out.projection->w1, true, config.head_lr_scale);
    opt.add_param(out.projection->b1, false, config.head_lr_scale);
    opt.add_param(out.projection->w2, true, config.head_lr_scale);
    opt.add_param(out.projection->b2, false, config.head_lr_scale);
  }
  std::vector<TensorPtr> trainable = opt.params();

  const int per_epoch = steps_per_epoch(ctx);
  const int total_steps = config.epochs * per_epoch;
  ScheduleSpec spec = resolve_schedule(config, total_steps);

  ModelBundle bundle;
  bundle.encoder = &weights;
  bundle.adapters = &*out.adapters;
  bundle.head = &out.head;
  bundle.feature_source = config.head_feature;
  auto query = dense_query(ctx);

  out.metrics.strategy = strategy_name(config.strategy);
  out.metrics.n_shot = episode.n_shot;
  out.metrics.seed = config.seed;

  int step = 0;
  double last_test_acc = -1.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto plan = plan_for_epoch(ctx, batch_rng, epoch);
    double loss_sum = 0.0, grad_sum = 0.0;
    int correct = 0, seen = 0;
    double lr_now = 0.0, tau_now = 0.0, lambda_now = 0.0;
    for (const auto& batch : plan.batches) {
      lr_now = lr_at(spec, step);
      tau_now = tau_at(spec, step);
      lambda_now = lambda_at(spec, step);

      std::vector<TensorPtr> losses;
      std::vector<TensorPtr> projections;
      std::vector<int> batch_labels;
      for (int index : batch) {
        auto img = augment(episode.support[index], config.augment, aug_rng);
        auto feat = config.head_feature == FeatureSource::Pooled
                        ? pooled_feature(weights, &*out.adapters, img.pixels, &drop_rng, true)
                        : encode_image(weights, &*out.adapters, img.pixels, &drop_rng, true);
        auto logits = out.head.forward(feat, &drop_rng, true);
        losses.push_back(cross_entropy_smoothed(logits, ctx.dense_labels[index],
                                                config.label_smoothing));
        correct += argmax_index(logits->data) == ctx.dense_labels[index];
        ++seen;
        if (hybrid) {
          projections.push_back(out.projection->forward(feat));
          batch_labels.push_back(ctx.dense_labels[index]);
        }
      }
      auto ce = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) ce = add(ce, losses[i]);
      ce = scale(ce, 1.0 / static_cast<double>(losses.size()));

      TensorPtr total = ce;
      if (hybrid) {
        SupConBatch supcon_batch;
        supcon_batch.projections = concat_rows(projections);
        supcon_batch.labels = batch_labels;
        supcon_batch.temperature = tau_now;
        total = hybrid_loss(ce, supcon_loss(supcon_batch), lambda_now);
      }
      if (!std::isfinite(total->value())) {
        throw NumericError("lora: non-finite loss at step " + std::to_string(step) +
                           " (lr=" + format_double(lr_now) + ", lambda=" +
                           format_double(lambda_now) + ", tau=" + format_double(tau_now) + ")");
      }
      zero_grads(trainable);
      backward(total);
      const double gnorm = opt.grad_norm();
      opt.step(lr_now);
      loss_sum += total->value();
      grad_sum += gnorm;
      if (observer) {
        StepSnapshot snap{step,      total->value(), lr_now, hybrid ? tau_now : 0.0,
                          hybrid ? lambda_now : 0.0, gnorm,  &trainable};
        observer(snap);
      }
      ++step;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(plan.batches.size());
    stats.train_acc = seen ? static_cast<double>(correct) / seen : 0.0;
    const bool do_eval = (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs;
    if (do_eval || last_test_acc < 0.0) last_test_acc = evaluate(bundle, query);
    stats.test_acc = last_test_acc;
    stats.lr = lr_now;
    stats.tau = hybrid ? tau_now : 0.0;
    stats.lambda = hybrid ? lambda_now : 0.0;
    stats.grad_norm = grad_sum / static_cast<double>(plan.batches.size());
    out.metrics.epochs.push_back(stats);
  }

  out.metrics.final_accuracy = last_test_acc >= 0.0 ? last_test_acc : evaluate(bundle, query);
  out.metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---- feature-space analysis -------------------------------------------------------

CompactnessReport compactness_report(const std::vector<std::vector<double>>& embeddings,
                                     const std::vector<int>& labels) {
  if (embeddings.size() != labels.size() || embeddings.empty()) {
    throw ShapeError("compactness: embeddings and labels must align");
  }
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  if (by_class.size() < 2) {
    throw DataError("compactness: need >= 2 classes, the inter-class distance is undefined");
  }
  bool some_pair = false;
  for (const auto& [c, idx] : by_class) some_pair = some_pair || idx.size() >= 2;
  if (!some_pair) throw DataError("compactness: no class has two samples");

  auto cosine_distance = [](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    const double denom = std::sqrt(na * nb);
    if (denom < 1e-30) throw NumericError("compactness: zero vector");
    return 1.0 - dot / denom;
  };

  double intra_sum = 0.0;
  int64_t intra_pairs = 0;
  for (const auto& [c, idx] : by_class) {
    for (size_t i = 0; i < idx.size(); ++i) {
      for (size_t j = i + 1; j < idx.size(); ++j) {
        intra_sum += cosine_distance(embeddings[idx[i]], embeddings[idx[j]]);
        ++intra_pairs;
      }
    }
  }

  std::vector<std::vector<double>> centroids;
  for (const auto& [c, idx] : by_class) {
    std::vector<double> mean(embeddings[0].size(), 0.0);
    for (int i : idx) {
      for (size_t k = 0; k < mean.size(); ++k) mean[k] += embeddings[i][k];
    }
    for (auto& v : mean) v /= static_cast<double>(idx.size());
    centroids.push_back(std::move(mean));
  }
  double inter_sum = 0.0;
  int64_t inter_pairs = 0;
  for (size_t i = 0; i < centroids.size(); ++i) {
    for (size_t j = i + 1; j < centroids.size(); ++j) {
      inter_sum += cosine_distance(centroids[i], centroids[j]);
      ++inter_pairs;
    }
  }

  CompactnessReport report;
  report.intra = intra_sum / static_cast<double>(intra_pairs);
  report.inter = inter_sum / static_cast<double>(inter_pairs);
  if (report.inter <= 0.0) {
    throw NumericError("compactness: inter-class distance is zero, the ratio is undefined");
  }
  report.ratio = report.intra / report.inter;

  auto projected = pca_2d(embeddings);
  report.projection.reserve(projected.size());
  for (size_t i = 0; i < projected.size(); ++i) {
    report.projection.push_back({projected[i][0], projected[i][1], static_cast<double>(labels[i])});
  }
  return report;
}

// ---- warm start ----------------------------------------------------------------------

void warm_start_encoder(EncoderWeights& weights, const WarmStartConfig& config) {
  if (config.classes < 2 || config.per_class < 2 || config.epochs < 1) {
    throw ConfigError("warm start: need >= 2 classes, >= 2 images per class, >= 1 epoch");
  }
  Rng root = Rng(weights.config.seed).fork("warmstart");
  auto dataset = synth_dataset(config.classes, config.per_class, weights.config.image_size,
                               root.fork("data").next_u64(), config.class_offset);
  std::vector<LabeledImage> images = dataset.train;
  images.insert(images.end(), dataset.val.begin(), dataset.val.end());

  weights.set_trainable(true);
  auto head = ClassificationHead::init(config.classes, weights.config.d_model,
                                       root.fork("init.head"), 0.0);
  AdamW opt;
  opt.weight_decay = config.weight_decay;
  for (const auto& [name, tensor] : weights.named) {
    const bool is_matrix = tensor->shape.size() == 2;
    opt.add_param(tensor, is_matrix);
  }
  opt.add_param(head.weight, true);
  opt.add_param(head.bias, false);

  auto batch_rng = root.fork("batches");
  const int per_epoch =
      (static_cast<int>(images.size()) + config.batch_size - 1) / config.batch_size;
  ScheduleSpec spec;
  spec.lr_base = config.lr;
  spec.lr_final = config.lr * 1e-2;
  spec.total_steps = std::max(config.epochs * per_epoch, 1);
  spec.warmup_steps = spec.total_steps / 10;
  spec.validate();

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto plan = random_batches(static_cast<int>(images.size()), config.batch_size,
                               batch_rng.fork(static_cast<uint64_t>(epoch)));
    for (const auto& batch : plan.batches) {
      std::vector<TensorPtr> losses;
      for (int index : batch) {
        auto feat = pooled_feature(weights, nullptr, images[index].pixels);
        auto logits = head.forward(feat);
        losses.push_back(
            cross_entropy_smoothed(logits, images[index].class_id, config.label_smoothing));
      }
      auto total = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
      total = scale(total, 1.0 / static_cast<double>(losses.size()));
      if (!std::isfinite(total->value())) {
        throw NumericError("warm start: non-finite loss at step " + std::to_string(step));
      }
      opt.zero_grads();
      backward(total);
      opt.step(lr_at(spec, step));
      ++step;
    }
  }
  weights.set_trainable(false);
}

}  // namespace fslab
