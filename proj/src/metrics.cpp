#include "fslab/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fslab/errors.hpp"

namespace fslab {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string metrics_csv(const MetricsRecord& record) {
  std::string out = "epoch,train_loss,train_acc,test_acc,lr,tau,lambda,grad_norm\n";
  for (const auto& e : record.epochs) {
    out += std::to_string(e.epoch);
    for (double v : {e.train_loss, e.train_acc, e.test_acc, e.lr, e.tau, e.lambda, e.grad_norm}) {
      out += ",";
      out += format_double(v);
    }
    out += "\n";
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fslab
