#include "effzero/metrics.hpp"

#include <json.hpp>

namespace effzero {

std::string metrics_line(const MetricsRow& row) {
  nlohmann::ordered_json j;
  j["step"] = row.step;
  j["total"] = row.losses.total;
  j["value_prefix_ce"] = row.losses.value_prefix_ce;
  j["policy_ce"] = row.losses.policy_ce;
  j["value_ce"] = row.losses.value_ce;
  j["consistency"] = row.losses.consistency;
  j["weight_decay_term"] = row.losses.weight_decay_term;
  j["grad_norm"] = row.losses.grad_norm;
  j["lr"] = row.losses.learning_rate;
  j["saturations"] = row.losses.saturations;
  j["beta"] = row.beta;
  j["temperature"] = row.temperature;
  j["buffer_size"] = row.buffer_size;
  j["env_steps"] = row.env_steps;
  if (row.eval_episodes > 0) {
    j["eval_episodes"] = row.eval_episodes;
    j["eval_mean_return"] = row.eval_mean_return;
    j["eval_median_return"] = row.eval_median_return;
  }
  return j.dump();
}

MetricsWriter::MetricsWriter(const std::string& path) : out_(path) {
  if (!out_)
    throw std::runtime_error("metrics: cannot write '" + path + "'");
}

void MetricsWriter::write(const MetricsRow& row) {
  out_ << metrics_line(row) << "\n";
}

void MetricsWriter::flush() { out_.flush(); }

}  // namespace effzero
