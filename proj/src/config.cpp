#include "fslab/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "fslab/metrics.hpp"

namespace fslab {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

// shortest representation that parses back to the same double
std::string round_trip_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.15g", v);
  if (std::stod(buf) == v) return buf;
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct FieldDef {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int64_t v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
  }
}

std::vector<FieldDef> build_schema() {
  std::vector<FieldDef> defs;
  auto add = [&](std::string key, auto getter, auto setter) {
    defs.push_back({std::move(key), getter, setter});
  };
  auto int_field = [&](std::string key, int ExperimentConfig::* member) {
    add(key,
        [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
        [member, key](ExperimentConfig& c, const std::string& v) {
          c.*member = static_cast<int>(parse_int(key, v));
        });
  };
  auto u64_field = [&](std::string key, uint64_t ExperimentConfig::* member) {
    add(key,
        [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
        [member, key](ExperimentConfig& c, const std::string& v) {
          c.*member = static_cast<uint64_t>(parse_int(key, v));
        });
  };
  auto dbl_field = [&](std::string key, double ExperimentConfig::* member) {
    add(key,
        [member](const ExperimentConfig& c) { return round_trip_double(c.*member); },
        [member, key](ExperimentConfig& c, const std::string& v) {
          c.*member = parse_double(key, v);
        });
  };
  auto str_field = [&](std::string key, std::string ExperimentConfig::* member) {
    add(key, [member](const ExperimentConfig& c) { return c.*member; },
        [member](ExperimentConfig& c, const std::string& v) { c.*member = v; });
  };
  auto bool_field = [&](std::string key, bool ExperimentConfig::* member) {
    add(key,
        [member](const ExperimentConfig& c) { return c.*member ? "true" : "false"; },
        [member, key](ExperimentConfig& c, const std::string& v) {
          if (v == "true") {
            c.*member = true;
          } else if (v == "false") {
            c.*member = false;
          } else {
            throw ConfigError("config: key '" + key + "' expects true|false, got '" + v + "'");
          }
        });
  };

  u64_field("seed", &ExperimentConfig::seed);
  add("seeds",
      [](const ExperimentConfig& c) {
        std::string out;
        for (size_t i = 0; i < c.seeds.size(); ++i) {
          if (i) out += ",";
          out += std::to_string(c.seeds[i]);
        }
        return out;
      },
      [](ExperimentConfig& c, const std::string& v) {
        c.seeds.clear();
        if (trim(v).empty()) return;
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
          c.seeds.push_back(static_cast<uint64_t>(parse_int("seeds", trim(item))));
        }
      });
  str_field("out_dir", &ExperimentConfig::out_dir);
  int_field("jobs", &ExperimentConfig::jobs);

  str_field("dataset.kind", &ExperimentConfig::dataset_kind);
  str_field("dataset.manifest", &ExperimentConfig::dataset_manifest);
  int_field("dataset.classes", &ExperimentConfig::dataset_classes);
  int_field("dataset.per_class", &ExperimentConfig::dataset_per_class);
  int_field("dataset.image_size", &ExperimentConfig::dataset_image_size);
  u64_field("dataset.seed", &ExperimentConfig::dataset_seed);
  int_field("dataset.pool_per_class", &ExperimentConfig::pool_per_class);

  int_field("encoder.patch_size", &ExperimentConfig::encoder_patch_size);
  int_field("encoder.d_model", &ExperimentConfig::encoder_d_model);
  int_field("encoder.blocks", &ExperimentConfig::encoder_blocks);
  int_field("encoder.heads", &ExperimentConfig::encoder_heads);
  int_field("encoder.mlp_hidden", &ExperimentConfig::encoder_mlp_hidden);
  int_field("encoder.output_dim", &ExperimentConfig::encoder_output_dim);
  u64_field("encoder.seed", &ExperimentConfig::encoder_seed);
  bool_field("encoder.warm_start", &ExperimentConfig::encoder_warm_start);
  int_field("encoder.warm_start_classes", &ExperimentConfig::warm_start_classes);
  int_field("encoder.warm_start_per_class", &ExperimentConfig::warm_start_per_class);
  int_field("encoder.warm_start_epochs", &ExperimentConfig::warm_start_epochs);
  int_field("encoder.warm_start_batch", &ExperimentConfig::warm_start_batch);
  dbl_field("encoder.warm_start_lr", &ExperimentConfig::warm_start_lr);

  str_field("run.strategy", &ExperimentConfig::run_strategy);
  int_field("run.n_shot", &ExperimentConfig::run_n_shot);
  int_field("run.epochs", &ExperimentConfig::run_epochs);
  int_field("run.batch_size", &ExperimentConfig::run_batch_size);
  str_field("run.sampler", &ExperimentConfig::run_sampler);
  int_field("run.classes_per_batch", &ExperimentConfig::run_classes_per_batch);
  int_field("run.instances_per_class", &ExperimentConfig::run_instances_per_class);
  dbl_field("run.label_smoothing", &ExperimentConfig::run_label_smoothing);
  dbl_field("run.dropout", &ExperimentConfig::run_dropout);
  dbl_field("run.weight_decay", &ExperimentConfig::run_weight_decay);
  str_field("run.augment", &ExperimentConfig::run_augment);
  str_field("run.head_feature", &ExperimentConfig::run_head_feature);
  int_field("run.eval_every", &ExperimentConfig::run_eval_every);
  int_field("run.projection_dim", &ExperimentConfig::run_projection_dim);
  int_field("run.projection_hidden", &ExperimentConfig::run_projection_hidden);
  dbl_field("run.head_lr_scale", &ExperimentConfig::run_head_lr_scale);

  int_field("lora.rank", &ExperimentConfig::lora_rank);
  dbl_field("lora.alpha", &ExperimentConfig::lora_alpha);
  dbl_field("lora.dropout", &ExperimentConfig::lora_dropout);
  int_field("lora.last_blocks", &ExperimentConfig::lora_last_blocks);
  str_field("lora.targets", &ExperimentConfig::lora_targets);

  dbl_field("schedule.lr_base", &ExperimentConfig::schedule_lr_base);
  dbl_field("schedule.lr_final", &ExperimentConfig::schedule_lr_final);
  dbl_field("schedule.warmup_fraction", &ExperimentConfig::schedule_warmup_fraction);
  dbl_field("schedule.tau_start", &ExperimentConfig::schedule_tau_start);
  dbl_field("schedule.tau_end", &ExperimentConfig::schedule_tau_end);
  dbl_field("schedule.lambda_start", &ExperimentConfig::schedule_lambda_start);
  dbl_field("schedule.lambda_end", &ExperimentConfig::schedule_lambda_end);
  dbl_field("schedule.lambda_warmup_fraction", &ExperimentConfig::schedule_lambda_warmup_fraction);
  str_field("schedule.lambda_shape", &ExperimentConfig::schedule_lambda_shape);

  str_field("proto.shot_grid", &ExperimentConfig::proto_shot_grid);
  str_field("proto.alpha_grid", &ExperimentConfig::proto_alpha_grid);
  str_field("proto.text_mode", &ExperimentConfig::proto_text_mode);
  str_field("proto.priors_file", &ExperimentConfig::proto_priors_file);
  int_field("proto.templates_per_class", &ExperimentConfig::proto_templates_per_class);
  dbl_field("proto.alpha", &ExperimentConfig::proto_alpha);

  int_field("analyze.classes", &ExperimentConfig::analyze_classes);
  str_field("analyze.augment", &ExperimentConfig::analyze_augment);
  return defs;
}

const std::vector<FieldDef>& schema() {
  static const std::vector<FieldDef> defs = build_schema();
  return defs;
}

void check_choice(const std::string& key, const std::string& value,
                  const std::vector<std::string>& choices) {
  for (const auto& c : choices) {
    if (value == c) return;
  }
  std::string allowed;
  for (size_t i = 0; i < choices.size(); ++i) {
    if (i) allowed += "|";
    allowed += choices[i];
  }
  throw ConfigError("config: key '" + key + "' must be " + allowed + ", got '" + value + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::parse_string(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " is not key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& def : schema()) {
      if (def.key == key) {
        def.set(cfg, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("config: unknown key '" + key + "'");
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

std::string ExperimentConfig::echo() const {
  std::string out;
  for (const auto& def : schema()) {
    out += def.key;
    out += " = ";
    out += def.get(*this);
    out += "\n";
  }
  return out;
}

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  check_choice("dataset.kind", c.dataset_kind, {"synth", "manifest"});
  check_choice("run.strategy", c.run_strategy,
               {"prototype", "linear_probe", "lora_ce", "lora_hybrid"});
  check_choice("run.sampler", c.run_sampler, {"auto", "random", "stratified"});
  check_choice("run.augment", c.run_augment, {"auto", "none", "low", "high"});
  check_choice("run.head_feature", c.run_head_feature, {"pooled", "embedding"});
  check_choice("schedule.lambda_shape", c.schedule_lambda_shape, {"ramp", "triangular"});
  check_choice("proto.text_mode", c.proto_text_mode, {"none", "file", "heldout"});
  check_choice("analyze.augment", c.analyze_augment, {"none", "low", "high"});
  if (c.dataset_kind == "manifest" && c.dataset_manifest.empty()) {
    throw ConfigError("config: dataset.kind=manifest requires dataset.manifest");
  }
  if (c.jobs < 1 || c.jobs > 64) throw ConfigError("config: jobs must be in [1,64]");
  if (c.run_n_shot < 1) throw ConfigError("config: run.n_shot must be >= 1");
  if (c.pool_per_class < 1) throw ConfigError("config: dataset.pool_per_class must be >= 1");

  const int n = c.run_n_shot;
  const bool low_shot = n <= 5;
  const auto strategy = strategy_from_string(c.run_strategy);

  if (c.seeds.empty()) c.seeds = {c.seed};
  if (c.encoder_mlp_hidden == 0) c.encoder_mlp_hidden = 4 * c.encoder_d_model;
  if (c.run_batch_size < 0) c.run_batch_size = n < 10 ? 8 : 16;
  if (c.run_instances_per_class < 0) c.run_instances_per_class = std::min(3, n);
  if (c.run_label_smoothing < 0) c.run_label_smoothing = low_shot ? 0.2 : 0.1;
  if (c.run_dropout < 0) {
    c.run_dropout = n <= 1 ? 0.5 : (n <= 3 ? 0.4 : (n <= 5 ? 0.3 : 0.25));
  }
  if (c.run_weight_decay < 0) c.run_weight_decay = low_shot ? 0.1 : 0.05;
  if (c.run_projection_dim == 0) c.run_projection_dim = low_shot ? 128 : 256;
  if (c.run_projection_hidden == 0) c.run_projection_hidden = c.run_projection_dim;
  if (c.run_head_lr_scale < 0) {
    c.run_head_lr_scale =
        (strategy == Strategy::LoraCe || strategy == Strategy::LoraHybrid) ? 10.0 : 1.0;
  }
  // desk-scale rates: the miniature feature space and small support sets
  // need larger steps than the full-scale 1e-3 -> 1e-6 schedule
  if (c.schedule_lr_base < 0) {
    c.schedule_lr_base =
        (strategy == Strategy::LoraCe || strategy == Strategy::LoraHybrid) ? 2e-3 : 3e-2;
  }
  if (c.schedule_lr_final < 0) c.schedule_lr_final = c.schedule_lr_base * 1e-3;
  if (c.lora_rank == 0) c.lora_rank = low_shot ? 4 : 8;
  if (c.lora_alpha == 0.0) c.lora_alpha = 2.0 * c.lora_rank;
  if (c.lora_dropout < 0) c.lora_dropout = 0.1;
  if (c.lora_last_blocks == 0) c.lora_last_blocks = low_shot ? 4 : 6;
  if (c.lora_last_blocks > c.encoder_blocks) c.lora_last_blocks = c.encoder_blocks;
  if (c.lora_targets.empty()) {
    std::string targets;
    for (int b = c.encoder_blocks - c.lora_last_blocks; b < c.encoder_blocks; ++b) {
      if (!targets.empty()) targets += ",";
      targets += "block." + std::to_string(b) + ".mlp.c_fc";
      targets += ",block." + std::to_string(b) + ".mlp.c_proj";
    }
    c.lora_targets = targets;
  }
  if (c.run_epochs < 0) {
    switch (strategy) {
      case Strategy::Prototype: c.run_epochs = 0; break;
      case Strategy::LinearProbe: c.run_epochs = 15; break;
      case Strategy::LoraCe: c.run_epochs = low_shot ? 15 : 20; break;
      case Strategy::LoraHybrid: c.run_epochs = low_shot ? 20 : 30; break;
    }
  }
  if (c.run_sampler == "auto") {
    c.run_sampler = strategy == Strategy::LoraHybrid ? "stratified" : "random";
  }
  if (c.run_augment == "auto") {
    switch (strategy) {
      case Strategy::Prototype: c.run_augment = "none"; break;
      case Strategy::LinearProbe: c.run_augment = n <= 1 ? "low" : "none"; break;
      default: c.run_augment = "high"; break;
    }
  }
  c.encoder_config();  // validates divisibility constraints
  return c;
}

EncoderConfig ExperimentConfig::encoder_config() const {
  EncoderConfig ec;
  ec.image_size = dataset_image_size;
  ec.patch_size = encoder_patch_size;
  ec.d_model = encoder_d_model;
  ec.num_blocks = encoder_blocks;
  ec.num_heads = encoder_heads;
  ec.mlp_hidden = encoder_mlp_hidden > 0 ? encoder_mlp_hidden : 4 * encoder_d_model;
  ec.output_dim = encoder_output_dim;
  ec.seed = encoder_seed;
  ec.validate();
  return ec;
}

TrainRunConfig ExperimentConfig::train_config(uint64_t run_seed) const {
  TrainRunConfig rc;
  rc.strategy = strategy_from_string(run_strategy);
  rc.n_shot = run_n_shot;
  rc.epochs = run_epochs;
  rc.batch_size = run_batch_size;
  rc.sampler = run_sampler == "stratified" ? SamplerKind::Stratified : SamplerKind::Random;
  rc.classes_per_batch = run_classes_per_batch;
  rc.instances_per_class = run_instances_per_class;
  rc.label_smoothing = run_label_smoothing;
  rc.dropout = run_dropout;
  rc.weight_decay = run_weight_decay;
  rc.augment = augment_level_from_string(run_augment);
  rc.head_feature = run_head_feature == "embedding" ? FeatureSource::Embedding
                                                    : FeatureSource::Pooled;
  rc.eval_every = run_eval_every;
  rc.projection_dim = run_projection_dim;
  rc.projection_hidden = run_projection_hidden;
  rc.head_lr_scale = run_head_lr_scale > 0 ? run_head_lr_scale : 1.0;
  rc.seed = run_seed;

  rc.lora.rank = lora_rank;
  rc.lora.alpha = lora_alpha;
  rc.lora.dropout_p = lora_dropout;
  rc.lora.init_seed = Rng(run_seed).fork("init.lora").next_u64();
  std::stringstream ss(lora_targets);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) rc.lora.target_layers.push_back(item);
  }

  rc.schedule.lr_base = schedule_lr_base;
  rc.schedule.lr_final = schedule_lr_final;
  rc.schedule.tau_start = schedule_tau_start;
  rc.schedule.tau_end = schedule_tau_end;
  rc.schedule.lambda_start = schedule_lambda_start;
  rc.schedule.lambda_end = schedule_lambda_end;
  rc.schedule.lambda_warmup_fraction = schedule_lambda_warmup_fraction;
  rc.schedule.lambda_shape = schedule_lambda_shape == "triangular"
                                 ? ScheduleSpec::LambdaShape::Triangular
                                 : ScheduleSpec::LambdaShape::RampHold;
  rc.warmup_fraction = schedule_warmup_fraction;
  return rc;
}

Dataset ExperimentConfig::build_dataset() const {
  if (dataset_kind == "manifest") {
    return load_manifest(dataset_manifest, dataset_image_size);
  }
  return synth_dataset(dataset_classes, dataset_per_class, dataset_image_size, dataset_seed);
}

std::vector<uint64_t> ExperimentConfig::seed_list() const {
  return seeds.empty() ? std::vector<uint64_t>{seed} : seeds;
}

std::vector<int> ExperimentConfig::parse_shot_grid() const {
  std::vector<int> out;
  std::stringstream ss(proto_shot_grid);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(static_cast<int>(parse_int("proto.shot_grid", trim(item))));
  }
  if (out.empty()) throw ConfigError("config: proto.shot_grid is empty");
  return out;
}

std::vector<double> ExperimentConfig::parse_alpha_grid() const {
  std::vector<double> out;
  std::stringstream ss(proto_alpha_grid);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(parse_double("proto.alpha_grid", trim(item)));
  }
  if (out.empty()) throw ConfigError("config: proto.alpha_grid is empty");
  for (double a : out) {
    if (a < 0.0 || a > 1.0) throw ConfigError("config: proto.alpha_grid values must be in [0,1]");
  }
  return out;
}

}  // namespace fslab
