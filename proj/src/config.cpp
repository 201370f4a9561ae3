#include "effzero/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

extern char** environ;

namespace effzero {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_number(const std::string& key, const std::string& raw) {
  // Accepts plain numbers and the a^b power form (e.g. 0.997^4).
  const auto caret = raw.find('^');
  try {
    size_t pos = 0;
    if (caret == std::string::npos) {
      const double v = std::stod(raw, &pos);
      if (pos != raw.size()) throw std::invalid_argument(raw);
      return v;
    }
    const double base = std::stod(raw.substr(0, caret), &pos);
    if (pos != caret) throw std::invalid_argument(raw);
    const double expo = std::stod(raw.substr(caret + 1), &pos);
    if (pos != raw.size() - caret - 1) throw std::invalid_argument(raw);
    return std::pow(base, expo);
  } catch (const std::exception&) {
    throw ConfigError("config: cannot parse value '" + raw + "' for key '" +
                      key + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& raw) {
  if (raw == "true" || raw == "1" || raw == "on") return true;
  if (raw == "false" || raw == "0" || raw == "off") return false;
  throw ConfigError("config: cannot parse boolean '" + raw + "' for key '" +
                    key + "'");
}

const std::vector<Field>& fields() {
  static const std::vector<Field> k = [] {
    std::vector<Field> f;
    auto add_str = [&f](const char* key, std::string RunConfig::*m) {
      f.push_back({key, [m](const RunConfig& c) { return c.*m; },
                   [m](RunConfig& c, const std::string& v) { c.*m = v; }});
    };
    auto add_d = [&f](const char* key, double RunConfig::*m) {
      f.push_back({key, [m](const RunConfig& c) { return fmt_double(c.*m); },
                   [m, key](RunConfig& c, const std::string& v) {
                     c.*m = parse_number(key, v);
                   }});
    };
    auto add_i = [&f](const char* key, int RunConfig::*m) {
      f.push_back({key,
                   [m](const RunConfig& c) { return std::to_string(c.*m); },
                   [m, key](RunConfig& c, const std::string& v) {
                     c.*m = static_cast<int>(std::llround(parse_number(key, v)));
                   }});
    };
    auto add_i64 = [&f](const char* key, int64_t RunConfig::*m) {
      f.push_back({key,
                   [m](const RunConfig& c) { return std::to_string(c.*m); },
                   [m, key](RunConfig& c, const std::string& v) {
                     c.*m = std::llround(parse_number(key, v));
                   }});
    };
    auto add_u64 = [&f](const char* key, uint64_t RunConfig::*m) {
      f.push_back({key,
                   [m](const RunConfig& c) { return std::to_string(c.*m); },
                   [m, key](RunConfig& c, const std::string& v) {
                     c.*m = static_cast<uint64_t>(
                         std::llround(parse_number(key, v)));
                   }});
    };
    auto add_b = [&f](const char* key, bool RunConfig::*m) {
      f.push_back({key,
                   [m](const RunConfig& c) {
                     return std::string(c.*m ? "true" : "false");
                   },
                   [m, key](RunConfig& c, const std::string& v) {
                     c.*m = parse_bool(key, v);
                   }});
    };

    add_str("env_name", &RunConfig::env_name);
    add_i("env_size", &RunConfig::env_size);
    add_i("frames_stacked", &RunConfig::frames_stacked);
    add_i("frame_skip", &RunConfig::frame_skip);
    add_str("reward_clip", &RunConfig::reward_clip);
    add_d("discount", &RunConfig::discount);
    add_i("unroll_steps", &RunConfig::unroll_steps);
    add_i("td_steps", &RunConfig::td_steps);
    add_d("horizon_tau", &RunConfig::horizon_tau);
    add_i("num_simulations", &RunConfig::num_simulations);
    add_d("uct_c1", &RunConfig::uct_c1);
    add_d("uct_c2", &RunConfig::uct_c2);
    add_d("dirichlet_alpha", &RunConfig::dirichlet_alpha);
    add_d("dirichlet_frac", &RunConfig::dirichlet_frac);
    add_d("softminmax_eps", &RunConfig::softminmax_eps);
    add_d("temperature_point1", &RunConfig::temperature_point1);
    add_d("temperature_point2", &RunConfig::temperature_point2);
    add_d("temperature_value1", &RunConfig::temperature_value1);
    add_d("temperature_value2", &RunConfig::temperature_value2);
    add_i("lstm_reset_horizon", &RunConfig::lstm_reset_horizon);
    add_i("lstm_hidden", &RunConfig::lstm_hidden);
    add_d("loss_lambda1", &RunConfig::loss_lambda1);
    add_d("loss_lambda2", &RunConfig::loss_lambda2);
    add_d("loss_lambda3", &RunConfig::loss_lambda3);
    add_d("weight_decay", &RunConfig::weight_decay);
    add_d("lr_init", &RunConfig::lr_init);
    add_d("lr_decayed", &RunConfig::lr_decayed);
    add_i64("lr_decay_step", &RunConfig::lr_decay_step);
    add_d("momentum", &RunConfig::momentum);
    add_d("grad_clip_norm", &RunConfig::grad_clip_norm);
    add_b("dynamics_grad_scale", &RunConfig::dynamics_grad_scale);
    add_d("priority_alpha", &RunConfig::priority_alpha);
    add_d("priority_beta_start", &RunConfig::priority_beta_start);
    add_d("priority_beta_end", &RunConfig::priority_beta_end);
    add_i("segment_length", &RunConfig::segment_length);
    add_i("min_replay_size", &RunConfig::min_replay_size);
    add_d("reanalyze_policy_ratio", &RunConfig::reanalyze_policy_ratio);
    add_i("batch_size", &RunConfig::batch_size);
    add_i64("training_steps", &RunConfig::training_steps);
    add_i64("env_steps_budget", &RunConfig::env_steps_budget);
    add_i("selfplay_model_interval", &RunConfig::selfplay_model_interval);
    add_i("target_model_interval", &RunConfig::target_model_interval);
    add_i64("checkpoint_interval", &RunConfig::checkpoint_interval);
    add_i("eval_interval", &RunConfig::eval_interval);
    add_i("eval_episodes", &RunConfig::eval_episodes);
    add_d("early_stop_return", &RunConfig::early_stop_return);
    add_i("latent_dim", &RunConfig::latent_dim);
    add_i("support_half_width", &RunConfig::support_half_width);
    add_i("support_bins", &RunConfig::support_bins);
    add_i("proj_dim", &RunConfig::proj_dim);
    add_i("proj_hidden", &RunConfig::proj_hidden);
    add_i("head_hidden", &RunConfig::head_hidden);
    add_i("rep_hidden", &RunConfig::rep_hidden);
    add_str("rep_arch", &RunConfig::rep_arch);
    add_b("enable_consistency", &RunConfig::enable_consistency);
    add_b("enable_value_prefix", &RunConfig::enable_value_prefix);
    add_b("enable_off_policy_correction",
          &RunConfig::enable_off_policy_correction);
    add_b("enable_data_augmentation", &RunConfig::enable_data_augmentation);
    add_u64("seed", &RunConfig::seed);
    add_str("run_mode", &RunConfig::run_mode);
    add_i("actors", &RunConfig::actors);
    add_i("context_workers", &RunConfig::context_workers);
    add_i("batch_workers", &RunConfig::batch_workers);
    add_i("queue_capacity", &RunConfig::queue_capacity);
    return f;
  }();
  return k;
}

void fail(const std::string& key, const std::string& why) {
  throw ConfigError("config: invalid " + key + ": " + why);
}

}  // namespace

void RunConfig::validate() const {
  if (!(discount > 0.0 && discount < 1.0))
    fail("discount", "requires 0 < gamma < 1");
  if (td_steps < 1) fail("td_steps", "requires k >= 1");
  if (unroll_steps < 1) fail("unroll_steps", "requires l_unroll >= 1");
  if (lstm_reset_horizon < 1) fail("lstm_reset_horizon", "requires zeta >= 1");
  if (dirichlet_frac < 0.0 || dirichlet_frac > 1.0)
    fail("dirichlet_frac", "requires 0 <= rho <= 1");
  if (dirichlet_alpha <= 0.0) fail("dirichlet_alpha", "requires xi > 0");
  if (!(softminmax_eps > 0.0)) fail("softminmax_eps", "requires eps > 0");
  if (support_bins < 3 || support_bins % 2 == 0)
    fail("support_bins", "requires an odd bin count >= 3");
  if (support_half_width < 1) fail("support_half_width", "requires S >= 1");
  if (!(temperature_point1 > 0.0 && temperature_point1 < 1.0))
    fail("temperature_point1", "requires a fraction in (0,1)");
  if (!(temperature_point2 > 0.0 && temperature_point2 < 1.0))
    fail("temperature_point2", "requires a fraction in (0,1)");
  if (!(temperature_point1 < temperature_point2))
    fail("temperature_point2", "decay points must be strictly increasing");
  if (num_simulations < 1) fail("num_simulations", "requires N_sim >= 1");
  if (batch_size < 1) fail("batch_size", "requires >= 1");
  if (training_steps < 1) fail("training_steps", "requires >= 1");
  if (env_steps_budget < 1) fail("env_steps_budget", "requires >= 1");
  if (segment_length < 1) fail("segment_length", "requires >= 1");
  if (min_replay_size < 1) fail("min_replay_size", "requires >= 1");
  if (reanalyze_policy_ratio < 0.0 || reanalyze_policy_ratio > 1.0)
    fail("reanalyze_policy_ratio", "requires a fraction in [0,1]");
  if (priority_alpha < 0.0) fail("priority_alpha", "requires alpha >= 0");
  if (frames_stacked < 1) fail("frames_stacked", "requires >= 1");
  if (reward_clip != "auto" && reward_clip != "on" && reward_clip != "off")
    fail("reward_clip", "must be 'auto', 'on' or 'off'");
  if (frame_skip < 1) fail("frame_skip", "requires >= 1");
  if (latent_dim < 1) fail("latent_dim", "requires >= 1");
  if (grad_clip_norm <= 0.0) fail("grad_clip_norm", "requires > 0");
  if (run_mode != "serial" && run_mode != "parallel")
    fail("run_mode", "must be 'serial' or 'parallel'");
  if (rep_arch != "conv" && rep_arch != "mlp")
    fail("rep_arch", "must be 'conv' or 'mlp'");
  if (run_mode == "parallel") {
    if (actors < 1) fail("actors", "requires >= 1 in parallel mode");
    if (context_workers < 1) fail("context_workers", "requires >= 1");
    if (batch_workers < 1) fail("batch_workers", "requires >= 1");
    if (queue_capacity < 1) fail("queue_capacity", "requires >= 1");
  }
}

RunConfig profile(const std::string& name) {
  RunConfig c;  // field defaults are the full-scale table
  if (name == "full") return c;
  if (name == "toy") {
    c.training_steps = 20000;
    c.env_steps_budget = 20000;
    c.batch_size = 64;
    c.num_simulations = 25;
    c.segment_length = 50;
    c.min_replay_size = 200;
    c.support_half_width = 20;
    c.support_bins = 41;
    c.latent_dim = 64;
    c.lr_init = 0.02;
    c.lr_decayed = 0.002;
    c.lr_decay_step = 16666;  // 100k/120k of the budget, as at full scale
    c.lstm_hidden = 32;
    c.proj_dim = 128;
    c.proj_hidden = 64;
    c.rep_hidden = 128;
    c.rep_arch = "mlp";
    c.checkpoint_interval = 2000;
    // 0-4 pixel shifts wreck a 5x5 grid; augmentation stays available as a
    // switch but is off by default at desk scale.
    c.enable_data_augmentation = false;
    return c;
  }
  throw ConfigError("config: unknown profile '" + name + "'");
}

void apply_key_value(RunConfig& c, const std::string& key,
                     const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(c, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void apply_environment(RunConfig& c) {
  const std::string prefix = "EFFZERO_";
  for (char** e = environ; *e != nullptr; ++e) {
    std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(0, eq);
    if (name.rfind(prefix, 0) != 0) continue;
    std::string key = name.substr(prefix.size());
    for (auto& ch : key) ch = static_cast<char>(std::tolower(ch));
    apply_key_value(c, key, entry.substr(eq + 1));
  }
}

}  // namespace

RunConfig load_config(const std::string& path,
                      const std::string& profile_name) {
  RunConfig c = profile(profile_name);
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                          ": expected key = value");
      apply_key_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  apply_environment(c);
  c.validate();
  return c;
}

std::string save_config(const RunConfig& c) {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.key << " = " << f.get(c) << "\n";
  return os.str();
}

void save_config_file(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("config: cannot write '" + path + "'");
  out << save_config(c);
}

uint64_t config_hash(const RunConfig& c) {
  const std::string s = save_config(c);
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace effzero
