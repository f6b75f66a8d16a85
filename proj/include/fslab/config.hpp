#pragma once

#include <string>
#include <vector>

#include "fslab/data.hpp"
#include "fslab/encoder.hpp"
#include "fslab/strategies.hpp"

namespace fslab {

// Flat key=value experiment configuration ('#' starts a comment, unknown
// keys are rejected). Sentinel values (-1, 0, "auto") mean "derive the
// default from the shot setting and strategy"; resolved() replaces all of
// them so the echoed config is fully concrete and reparses to itself.
struct ExperimentConfig {
  uint64_t seed = 0;
  std::vector<uint64_t> seeds;  // empty -> {seed}
  std::string out_dir = "out";
  int jobs = 1;

  std::string dataset_kind = "synth";  // synth|manifest
  std::string dataset_manifest;
  int dataset_classes = 10;
  int dataset_per_class = 40;
  int dataset_image_size = 32;
  uint64_t dataset_seed = 0;
  int pool_per_class = 20;

  int encoder_patch_size = 4;
  int encoder_d_model = 64;
  int encoder_blocks = 8;
  int encoder_heads = 4;
  int encoder_mlp_hidden = 0;  // 0 -> 4*d_model
  int encoder_output_dim = 64;
  uint64_t encoder_seed = 0;
  bool encoder_warm_start = false;
  int warm_start_classes = 6;
  int warm_start_per_class = 16;
  int warm_start_epochs = 2;
  int warm_start_batch = 16;
  double warm_start_lr = 2e-3;

  std::string run_strategy = "linear_probe";
  int run_n_shot = 5;
  int run_epochs = -1;
  int run_batch_size = -1;
  std::string run_sampler = "auto";  // auto|random|stratified
  int run_classes_per_batch = 8;
  int run_instances_per_class = -1;  // -1 -> min(3, n_shot)
  double run_label_smoothing = -1.0;
  double run_dropout = -1.0;
  double run_weight_decay = -1.0;
  std::string run_augment = "auto";  // auto|none|low|high
  std::string run_head_feature = "pooled";  // pooled|embedding
  int run_eval_every = 1;
  int run_projection_dim = 0;     // 0 -> 128 low-shot / 256 high-shot
  int run_projection_hidden = 0;  // 0 -> projection_dim
  double run_head_lr_scale = -1.0;  // -1 -> 1 for probes, 10 for lora runs

  int lora_rank = 0;        // 0 -> 4 low-shot / 8 high-shot
  double lora_alpha = 0.0;  // 0 -> 2*rank
  double lora_dropout = -1.0;
  int lora_last_blocks = 0;  // 0 -> 4 low-shot / 6 high-shot
  std::string lora_targets;  // comma list; overrides lora_last_blocks

  double schedule_lr_base = -1.0;   // -1 -> 3e-2 for probes, 2e-3 for lora runs
  double schedule_lr_final = -1.0;  // -1 -> lr_base * 1e-3
  double schedule_warmup_fraction = 0.1;
  double schedule_tau_start = 0.2;
  double schedule_tau_end = 0.07;
  double schedule_lambda_start = 0.05;
  double schedule_lambda_end = 0.3;
  double schedule_lambda_warmup_fraction = 0.5;
  std::string schedule_lambda_shape = "ramp";  // ramp|triangular

  std::string proto_shot_grid = "1,3,5,10,20";
  std::string proto_alpha_grid = "0,0.2,0.5,0.7";
  std::string proto_text_mode = "heldout";  // none|file|heldout
  std::string proto_priors_file;
  int proto_templates_per_class = 5;
  double proto_alpha = 0.5;

  int analyze_classes = 0;  // 0 = all classes
  std::string analyze_augment = "none";

  static ExperimentConfig parse_string(const std::string& text);
  static ExperimentConfig parse_file(const std::string& path);
  std::string echo() const;

  ExperimentConfig resolved() const;  // applies defaults, validates

  // builders over a resolved config
  EncoderConfig encoder_config() const;
  TrainRunConfig train_config(uint64_t run_seed) const;
  Dataset build_dataset() const;
  std::vector<uint64_t> seed_list() const;
  std::vector<int> parse_shot_grid() const;
  std::vector<double> parse_alpha_grid() const;
};

}  // namespace fslab
