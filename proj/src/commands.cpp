#include "fslab/commands.hpp"

#include <cmath>
#include <filesystem>
#include <set>
#include <atomic>
#include <algorithm>
#include <functional>
#include <iostream>
#include <thread>

#include "json.hpp"

#include "fslab/config.hpp"
#include "fslab/strategies.hpp"

namespace fslab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int guard(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

ExperimentConfig load_config(const CliOptions& opts) {
  ExperimentConfig cfg = opts.config_path.empty()
                             ? ExperimentConfig{}
                             : ExperimentConfig::parse_file(opts.config_path);
  if (opts.seed) {
    cfg.seed = *opts.seed;
    cfg.seeds = {*opts.seed};
  }
  if (opts.out_dir) cfg.out_dir = *opts.out_dir;
  if (opts.jobs) cfg.jobs = *opts.jobs;
  return cfg.resolved();
}

EncoderWeights prepare_encoder(const ExperimentConfig& cfg) {
  auto weights = init_encoder(cfg.encoder_config());
  if (cfg.encoder_warm_start) {
    WarmStartConfig wc;
    wc.classes = cfg.warm_start_classes;
    wc.per_class = cfg.warm_start_per_class;
    wc.epochs = cfg.warm_start_epochs;
    wc.batch_size = cfg.warm_start_batch;
    wc.lr = cfg.warm_start_lr;
    warm_start_encoder(weights, wc);
  }
  return weights;
}

Episode episode_for(const Pools& pools, int n_shot, uint64_t run_seed) {
  return sample_episode(pools, n_shot, Rng(run_seed).fork("episode"));
}

json augment_metadata(const std::string& level) {
  // calibration ranges recorded for provenance
  return json{{"level", level},
              {"area_scale", {0.6, 1.0}},
              {"flip_p", 0.5},
              {"jitter_factors", {0.7, 1.3}},
              {"grayscale_p", 0.2}};
}

json schedule_metadata(const ExperimentConfig& cfg) {
  return json{{"lr_base", cfg.schedule_lr_base},
              {"lr_final", cfg.schedule_lr_final},
              {"warmup_fraction", cfg.schedule_warmup_fraction},
              {"tau_start", cfg.schedule_tau_start},
              {"tau_end", cfg.schedule_tau_end},
              {"lambda_start", cfg.schedule_lambda_start},
              {"lambda_end", cfg.schedule_lambda_end},
              {"lambda_warmup_fraction", cfg.schedule_lambda_warmup_fraction},
              {"lambda_shape", cfg.schedule_lambda_shape}};
}

NamedTensors checkpoint_of(const EncoderWeights& weights, const LoraSet* adapters,
                           const ClassificationHead* head) {
  NamedTensors all = encoder_to_named(weights);
  if (adapters) {
    for (auto& [name, tensor] : adapters_to_named(*adapters).entries) all.add(name, tensor);
  }
  if (head) {
    all.add("head.config",
            Tensor::make({3}, {static_cast<double>(head->weight->shape[0]),
                               static_cast<double>(head->weight->shape[1]), head->dropout_p}));
    all.add("head.weight", head->weight);
    all.add("head.bias", head->bias);
  }
  return all;
}

EncoderWeights encoder_from_checkpoint(const NamedTensors& stored) {
  auto entry = stored.require("encoder.config");
  if (entry->size() != 8) throw DataError("checkpoint: bad encoder.config entry");
  EncoderConfig ec;
  ec.image_size = static_cast<int>(entry->data[0]);
  ec.patch_size = static_cast<int>(entry->data[1]);
  ec.d_model = static_cast<int>(entry->data[2]);
  ec.num_blocks = static_cast<int>(entry->data[3]);
  ec.num_heads = static_cast<int>(entry->data[4]);
  ec.mlp_hidden = static_cast<int>(entry->data[5]);
  ec.output_dim = static_cast<int>(entry->data[6]);
  ec.seed = static_cast<uint64_t>(entry->data[7]);
  return encoder_from_named(stored, ec);
}

TextPriorProvider provider_for(const ExperimentConfig& cfg, const EncoderWeights& weights,
                               const Pools& pools, const Episode& episode, uint64_t run_seed) {
  if (cfg.proto_text_mode == "none") return TextPriorProvider::none();
  if (cfg.proto_text_mode == "file") {
    if (cfg.proto_priors_file.empty()) {
      throw ConfigError("config: proto.text_mode=file requires proto.priors_file");
    }
    auto provider = TextPriorProvider::from_file(cfg.proto_priors_file);
    if (provider.dim != cfg.encoder_output_dim) {
      throw DataError("priors: file dimension " + std::to_string(provider.dim) +
                      " does not match encoder output dim " +
                      std::to_string(cfg.encoder_output_dim));
    }
    return provider;
  }
  return TextPriorProvider::heldout_proxy(weights, pools, episode, cfg.proto_templates_per_class,
                                          Rng(run_seed).fork("priors"));
}

}  // namespace

int cmd_prototype(const CliOptions& opts) {
  return guard([&] {
    auto cfg = load_config(opts);
    auto shots = cfg.parse_shot_grid();
    auto alphas = cfg.parse_alpha_grid();
    if (cfg.proto_text_mode == "none") {
      for (double a : alphas) {
        if (a > 0.0) {
          throw ConfigError(
              "config: proto.text_mode=none supports only alpha=0 in proto.alpha_grid");
        }
      }
    }

    auto dataset = cfg.build_dataset();
    auto pools = build_pools(dataset, cfg.pool_per_class);
    auto weights = prepare_encoder(cfg);

    struct Cell {
      int n_shot;
      double alpha;
      double accuracy;
    };
    std::vector<std::vector<Cell>> rows(shots.size());

    auto run_shot = [&](size_t shot_index) {
      const int n_shot = shots[shot_index];
      auto episode = sample_episode(pools, n_shot,
                                    Rng(cfg.seed).fork("episode").fork(
                                        static_cast<uint64_t>(n_shot)));
      auto provider = provider_for(cfg, weights, pools, episode, cfg.seed);

      NoGradScope no_grad;
      std::map<int, std::vector<TensorPtr>> support_emb;
      for (const auto& img : episode.support) {
        support_emb[img.class_id].push_back(encode_image(weights, nullptr, img.pixels));
      }
      std::vector<TensorPtr> query_emb;
      for (const auto& img : episode.query) {
        query_emb.push_back(encode_image(weights, nullptr, img.pixels));
      }

      for (double alpha : alphas) {
        PrototypeSet set;
        set.fusion_alpha = alpha;
        for (const auto& [class_id, embeddings] : support_emb) {
          set.class_ids.push_back(class_id);
          auto p_img = visual_prototype(embeddings);
          set.image_protos.push_back(p_img);
          if (provider.mode != TextPriorProvider::Mode::None) {
            auto p_text = textual_prototype(provider, class_id);
            set.text_protos.push_back(p_text);
            set.hybrid_protos.push_back(hybrid_prototype(p_img, p_text, alpha));
          } else {
            set.hybrid_protos.push_back(p_img);
          }
        }
        int correct = 0;
        for (size_t q = 0; q < query_emb.size(); ++q) {
          correct += classify_by_prototype(query_emb[q], set) == episode.query[q].class_id;
        }
        rows[shot_index].push_back(
            {n_shot, alpha, static_cast<double>(correct) / query_emb.size()});
      }
    };

    const int jobs = std::min<int>(cfg.jobs, static_cast<int>(shots.size()));
    if (jobs <= 1) {
      for (size_t i = 0; i < shots.size(); ++i) run_shot(i);
    } else {
      std::vector<std::thread> workers;
      std::atomic<size_t> next{0};
      for (int w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
          for (size_t i = next.fetch_add(1); i < shots.size(); i = next.fetch_add(1)) {
            run_shot(i);
          }
        });
      }
      for (auto& t : workers) t.join();
    }

    fs::create_directories(cfg.out_dir);
    std::string csv = "n_shot,alpha,accuracy\n";
    for (const auto& shot_rows : rows) {
      for (const auto& cell : shot_rows) {
        csv += std::to_string(cell.n_shot) + "," + format_double(cell.alpha) + "," +
               format_double(cell.accuracy) + "\n";
      }
    }
    write_text_file((fs::path(cfg.out_dir) / "prototype_sweep.csv").string(), csv);
    write_text_file((fs::path(cfg.out_dir) / "config.txt").string(), cfg.echo());
    std::cout << "wrote " << (fs::path(cfg.out_dir) / "prototype_sweep.csv").string() << "\n";
  });
}

int cmd_train(const CliOptions& opts) {
  return guard([&] {
    auto cfg = load_config(opts);
    const auto strategy = strategy_from_string(cfg.run_strategy);
    if (strategy == Strategy::Prototype) {
      throw ConfigError("config: run.strategy=prototype belongs to the 'prototype' command");
    }
    // fail on sampler/strategy mismatches before any heavy work
    cfg.train_config(cfg.seed).validate();

    auto dataset = cfg.build_dataset();
    auto pools = build_pools(dataset, cfg.pool_per_class);
    auto weights = prepare_encoder(cfg);

    fs::create_directories(cfg.out_dir);
    write_text_file((fs::path(cfg.out_dir) / "config.txt").string(), cfg.echo());

    std::vector<double> final_accs;
    for (uint64_t run_seed : cfg.seed_list()) {
      auto episode = episode_for(pools, cfg.run_n_shot, run_seed);
      auto rc = cfg.train_config(run_seed);
      TrainOutput out = strategy == Strategy::LinearProbe
                            ? run_linear_probe(weights, episode, rc)
                            : run_lora(weights, episode, rc);

      const fs::path seed_dir = fs::path(cfg.out_dir) / ("seed" + std::to_string(run_seed));
      fs::create_directories(seed_dir);
      write_text_file((seed_dir / "metrics.csv").string(), metrics_csv(out.metrics));

      json summary{{"strategy", out.metrics.strategy},
                   {"n_shot", out.metrics.n_shot},
                   {"seed", run_seed},
                   {"epochs", cfg.run_epochs},
                   {"final_accuracy", out.metrics.final_accuracy},
                   {"wall_seconds", out.metrics.wall_seconds},
                   {"sampler", cfg.run_sampler},
                   {"head_feature", cfg.run_head_feature},
                   {"label_smoothing", cfg.run_label_smoothing},
                   {"dropout", cfg.run_dropout},
                   {"weight_decay", cfg.run_weight_decay},
                   {"augment", augment_metadata(cfg.run_augment)},
                   {"schedule", schedule_metadata(cfg)}};
      if (out.adapters) {
        summary["lora"] = json{{"rank", cfg.lora_rank},
                               {"alpha", cfg.lora_alpha},
                               {"dropout", cfg.lora_dropout},
                               {"targets", cfg.lora_targets},
                               {"trainable_params", out.adapters->trainable_param_count()}};
      }
      write_text_file((seed_dir / "summary.json").string(), summary.dump(2) + "\n");
      save_fslw((seed_dir / "checkpoint.fslw").string(),
                checkpoint_of(weights, out.adapters ? &*out.adapters : nullptr, &out.head));
      final_accs.push_back(out.metrics.final_accuracy);
      std::cout << "seed " << run_seed << ": final_accuracy=" << format_double(
                       out.metrics.final_accuracy) << "\n";
    }

    double mean = 0.0;
    for (double a : final_accs) mean += a;
    mean /= static_cast<double>(final_accs.size());
    double var = 0.0;
    for (double a : final_accs) var += (a - mean) * (a - mean);
    const double stddev = final_accs.size() > 1
                              ? std::sqrt(var / static_cast<double>(final_accs.size() - 1))
                              : 0.0;
    json aggregate{{"strategy", cfg.run_strategy},
                   {"n_shot", cfg.run_n_shot},
                   {"seeds", cfg.seed_list()},
                   {"final_accuracies", final_accs},
                   {"mean_final_accuracy", mean},
                   {"stddev_final_accuracy", stddev}};
    write_text_file((fs::path(cfg.out_dir) / "summary.json").string(), aggregate.dump(2) + "\n");
  });
}

int cmd_analyze(const CliOptions& opts, const std::string& checkpoint_path,
                const std::string& augment_override) {
  return guard([&] {
    auto cfg = load_config(opts);
    const std::string level_name =
        augment_override.empty() ? cfg.analyze_augment : augment_override;
    const AugmentLevel level = augment_level_from_string(level_name);

    auto stored = load_fslw(checkpoint_path);
    auto weights = encoder_from_checkpoint(stored);
    std::optional<LoraSet> adapters;
    if (stored.contains("lora.config")) adapters = adapters_from_named(stored, weights);

    auto dataset = cfg.build_dataset();
    auto pools = build_pools(dataset, cfg.pool_per_class);

    std::vector<int> class_ids;
    {
      std::set<int> all;
      for (const auto& img : pools.test_pool) all.insert(img.class_id);
      class_ids.assign(all.begin(), all.end());
      if (cfg.analyze_classes > 0 && cfg.analyze_classes < static_cast<int>(class_ids.size())) {
        Rng rng = Rng(cfg.seed).fork("analyze.classes");
        rng.shuffle(class_ids);
        class_ids.resize(cfg.analyze_classes);
        std::sort(class_ids.begin(), class_ids.end());
      }
    }
    std::set<int> keep(class_ids.begin(), class_ids.end());

    Rng aug_rng = Rng(cfg.seed).fork("analyze.augment");
    std::vector<std::vector<double>> embeddings;
    std::vector<int> labels;
    {
      NoGradScope no_grad;
      for (const auto& img : pools.test_pool) {
        if (!keep.count(img.class_id)) continue;
        auto input = augment(img, level, aug_rng);
        auto emb = encode_image(weights, adapters ? &*adapters : nullptr,
                                resize_image(input.pixels, weights.config.image_size));
        embeddings.push_back(emb->data);
        labels.push_back(img.class_id);
      }
    }

    auto report = compactness_report(embeddings, labels);

    fs::create_directories(cfg.out_dir);
    json summary{{"intra", report.intra},
                 {"inter", report.inter},
                 {"ratio", report.ratio},
                 {"augment", augment_metadata(level_name)},
                 {"adapted", adapters.has_value()},
                 {"classes", class_ids.size()},
                 {"samples", labels.size()},
                 {"projection_method", "pca"}};
    write_text_file((fs::path(cfg.out_dir) / "compactness.json").string(),
                    summary.dump(2) + "\n");
    std::string csv = "x,y,label\n";
    for (const auto& p : report.projection) {
      csv += format_double(p[0]) + "," + format_double(p[1]) + "," +
             std::to_string(static_cast<int>(p[2])) + "\n";
    }
    write_text_file((fs::path(cfg.out_dir) / "projection.csv").string(), csv);
    std::cout << "ratio=" << format_double(report.ratio) << " (intra=" <<
        format_double(report.intra) << ", inter=" << format_double(report.inter) << ")\n";
  });
}

int cmd_export_embeddings(const CliOptions& opts, const std::string& checkpoint_path,
                          const std::string& out_file, int per_class, const std::string& split) {
  return guard([&] {
    auto cfg = load_config(opts);
    if (per_class < 1) throw ConfigError("export-emb: --per-class must be >= 1");
    if (split != "train" && split != "val") {
      throw ConfigError("export-emb: --split must be train or val");
    }
    auto dataset = cfg.build_dataset();
    EncoderWeights weights = checkpoint_path.empty()
                                 ? prepare_encoder(cfg)
                                 : encoder_from_checkpoint(load_fslw(checkpoint_path));

    const auto& images = split == "train" ? dataset.train : dataset.val;
    TextPriorProvider provider;
    provider.mode = TextPriorProvider::Mode::File;
    provider.dim = weights.config.output_dim;
    std::map<int, int> taken;
    {
      NoGradScope no_grad;
      for (const auto& img : images) {
        if (taken[img.class_id] >= per_class) continue;
        auto emb = encode_image(weights, nullptr,
                                resize_image(img.pixels, weights.config.image_size));
        provider.vectors[img.class_id].push_back(emb->data);
        ++taken[img.class_id];
      }
    }
    for (int c = 0; c < dataset.num_classes; ++c) {
      if (!provider.vectors.count(c)) {
        throw DataError("export-emb: class " + std::to_string(c) + " has no images in the " +
                        split + " split");
      }
    }
    provider.save(out_file);
    std::cout << "wrote " << out_file << " (" << provider.vectors.size() << " classes, D="
              << provider.dim << ")\n";
  });
}

int cmd_import_text_priors(const CliOptions& opts, const std::string& priors_path) {
  return guard([&] {
    auto provider = TextPriorProvider::from_file(priors_path);
    if (!opts.config_path.empty()) {
      auto cfg = load_config(opts);
      if (provider.dim != cfg.encoder_output_dim) {
        throw DataError("priors: file dimension " + std::to_string(provider.dim) +
                        " does not match encoder output dim " +
                        std::to_string(cfg.encoder_output_dim));
      }
    }
    size_t min_templates = SIZE_MAX, max_templates = 0;
    for (const auto& [c, rows] : provider.vectors) {
      min_templates = std::min(min_templates, rows.size());
      max_templates = std::max(max_templates, rows.size());
    }
    std::cout << "ok: classes=" << provider.vectors.size() << " templates=" << min_templates;
    if (max_templates != min_templates) std::cout << ".." << max_templates;
    std::cout << " D=" << provider.dim << "\n";
  });
}

int cmd_synth(const CliOptions& opts, const std::string& dataset_dir) {
  return guard([&] {
    auto cfg = load_config(opts);
    if (dataset_dir.empty()) throw ConfigError("synth: --dataset-dir is required");
    auto dataset = cfg.build_dataset();
    emit_dataset(dataset, dataset_dir);
    std::cout << "wrote " << dataset.train.size() + dataset.val.size() << " images to "
              << dataset_dir << "\n";
  });
}

}  // namespace fslab
