#pragma once

#include <optional>
#include <string>

namespace fslab {

// Options shared by every subcommand; explicit flags override the config.
struct CliOptions {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> jobs;
};

// Exit codes: 0 success, 1 config error, 2 data/IO error, 3 numeric failure.
int cmd_prototype(const CliOptions& opts);
int cmd_train(const CliOptions& opts);
int cmd_analyze(const CliOptions& opts, const std::string& checkpoint_path,
                const std::string& augment_override);
int cmd_export_embeddings(const CliOptions& opts, const std::string& checkpoint_path,
                          const std::string& out_file, int per_class, const std::string& split);
int cmd_import_text_priors(const CliOptions& opts, const std::string& priors_path);
int cmd_synth(const CliOptions& opts, const std::string& dataset_dir);

}  // namespace fslab
