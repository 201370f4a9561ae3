#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "effzero/trainer.hpp"

namespace effzero {

struct MetricsRow {
  int64_t step = 0;
  LossReport losses;
  double beta = 0.0;
  double temperature = 0.0;
  int64_t buffer_size = 0;
  int64_t env_steps = 0;
  // Present only on evaluation rows (eval_episodes > 0).
  int eval_episodes = 0;
  double eval_mean_return = 0.0;
  double eval_median_return = 0.0;
};

std::string metrics_line(const MetricsRow& row);

// JSON-lines sink. Content carries no wall-clock fields, so two serial runs
// with equal seeds produce byte-identical files.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void write(const MetricsRow& row);
  void flush();

 private:
  std::ofstream out_;
};

}  // namespace effzero
