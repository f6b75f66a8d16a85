#pragma once

#include <string>
#include <vector>

namespace fslab {

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double lr = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
  double grad_norm = 0.0;
};

struct MetricsRecord {
  std::string strategy;
  int n_shot = 0;
  uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  double final_accuracy = 0.0;
  double wall_seconds = 0.0;  // reported in the summary only, never in the CSV
};

std::string format_double(double v);  // shortest stable form, "%.10g"
std::string metrics_csv(const MetricsRecord& record);
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace fslab
