#include <string>

#include "CLI11.hpp"

#include "fslab/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"fslab: few-shot adaptation laboratory on a miniature frozen encoder"};
  app.require_subcommand(1);

  fslab::CliOptions opts;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "experiment config file (key = value)");
    cmd->add_option("--seed", opts.seed, "override the config seed (and seed list)");
    cmd->add_option("--out", opts.out_dir, "override the output directory");
    cmd->add_option("--jobs", opts.jobs, "parallel grid cells where supported");
  };

  auto* prototype = app.add_subcommand(
      "prototype", "training-free prototype sweep over shots and fusion weights");
  add_common(prototype);

  auto* train = app.add_subcommand("train", "train a linear probe or LoRA adapters");
  add_common(train);

  std::string checkpoint, augment_override;
  auto* analyze = app.add_subcommand("analyze", "feature-space compactness and 2-D projection");
  add_common(analyze);
  analyze->add_option("--checkpoint", checkpoint, "model checkpoint (.fslw)")->required();
  analyze->add_option("--augment", augment_override, "input augmentation: none|low|high");

  std::string emb_out = "embeddings.csv", emb_split = "train";
  int emb_per_class = 5;
  auto* export_emb =
      app.add_subcommand("export-emb", "export per-class embeddings for prior files");
  add_common(export_emb);
  export_emb->add_option("--checkpoint", checkpoint,
                         "encoder checkpoint (.fslw); fresh encoder otherwise");
  export_emb->add_option("--out-file", emb_out, "output embedding file");
  export_emb->add_option("--per-class", emb_per_class, "images per class to embed");
  export_emb->add_option("--split", emb_split, "dataset split: train|val");

  std::string priors_file;
  auto* import_priors =
      app.add_subcommand("import-priors", "validate a text-prior embedding file");
  add_common(import_priors);
  import_priors->add_option("--file", priors_file, "embedding file (fslab-emb v1)")->required();

  std::string dataset_dir;
  auto* synth =
      app.add_subcommand("synth", "emit the synthetic dataset as PPM files + manifest");
  add_common(synth);
  synth->add_option("--dataset-dir", dataset_dir, "output directory for images and manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (prototype->parsed()) return fslab::cmd_prototype(opts);
  if (train->parsed()) return fslab::cmd_train(opts);
  if (analyze->parsed()) return fslab::cmd_analyze(opts, checkpoint, augment_override);
  if (export_emb->parsed()) {
    return fslab::cmd_export_embeddings(opts, checkpoint, emb_out, emb_per_class, emb_split);
  }
  if (import_priors->parsed()) return fslab::cmd_import_text_priors(opts, priors_file);
  if (synth->parsed()) return fslab::cmd_synth(opts, dataset_dir);
  return 1;
}
