#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace effzero {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Full run configuration. Field defaults are the published full-scale
// settings; the "toy" profile overrides them with values that keep the whole
// pipeline runnable on a laptop CPU (see profile()).
struct RunConfig {
  // environment
  std::string env_name = "catcher";  // catcher | deep_sea | external:<cmd>
  int env_size = 5;                  // grid side for the built-in envs
  int frames_stacked = 4;
  int frame_skip = 1;  // protocol envs only; built-ins are skip-free
  // Sign-clip rewards at collection: "auto" clips for protocol envs and
  // leaves the in-range built-ins alone.
  std::string reward_clip = "auto";

  bool reward_clip_enabled() const {
    if (reward_clip == "on") return true;
    if (reward_clip == "off") return false;
    return env_name.rfind("external:", 0) == 0;
  }

  // core MDP / targets
  double discount = 0.988053892081095;  // 0.997^4
  int unroll_steps = 5;                 // l_unroll
  int td_steps = 5;                     // k
  double horizon_tau = 0.3;             // dynamic-horizon freshness scale

  // search
  int num_simulations = 50;
  double uct_c1 = 1.25;
  double uct_c2 = 19652.0;
  double dirichlet_alpha = 0.3;
  double dirichlet_frac = 0.25;
  double softminmax_eps = 0.01;
  double temperature_point1 = 0.5;  // fraction of training steps
  double temperature_point2 = 0.75;
  double temperature_value1 = 0.5;  // temperature after point1
  double temperature_value2 = 0.25;

  // value prefix
  int lstm_reset_horizon = 5;  // zeta
  int lstm_hidden = 512;

  // losses / optimizer
  double loss_lambda1 = 1.0;   // policy
  double loss_lambda2 = 0.25;  // value
  double loss_lambda3 = 2.0;   // consistency
  double weight_decay = 1e-4;
  double lr_init = 0.2;
  double lr_decayed = 0.02;
  int64_t lr_decay_step = 100000;
  double momentum = 0.9;
  double grad_clip_norm = 5.0;
  bool dynamics_grad_scale = false;  // halve gradients through each unroll

  // replay / priorities
  double priority_alpha = 0.6;
  double priority_beta_start = 0.4;
  double priority_beta_end = 1.0;
  int segment_length = 400;
  int min_replay_size = 2000;
  double reanalyze_policy_ratio = 0.99;

  // schedule / budget
  int batch_size = 256;
  int64_t training_steps = 120000;  // T_total
  int64_t env_steps_budget = 100000;
  int selfplay_model_interval = 100;
  int target_model_interval = 200;
  int64_t checkpoint_interval = 5000;
  int eval_interval = 0;  // 0 disables periodic evaluation
  int eval_episodes = 32;
  double early_stop_return = std::numeric_limits<double>::quiet_NaN();

  // model sizes
  int latent_dim = 256;
  int support_half_width = 300;  // categorical scalar range [-S, S]
  int support_bins = 601;
  int proj_dim = 1024;
  int proj_hidden = 512;
  int head_hidden = 32;
  int rep_hidden = 256;
  std::string rep_arch = "conv";  // conv | mlp

  // ablation switches
  bool enable_consistency = true;
  bool enable_value_prefix = true;
  bool enable_off_policy_correction = true;
  bool enable_data_augmentation = true;

  // execution
  uint64_t seed = 0;
  std::string run_mode = "serial";  // serial | parallel
  int actors = 1;
  int context_workers = 1;
  int batch_workers = 1;
  int queue_capacity = 8;

  // Throws ConfigError naming the offending key.
  void validate() const;

  int64_t replay_capacity() const { return env_steps_budget; }

  double learning_rate(int64_t step) const {
    return step >= lr_decay_step ? lr_decayed : lr_init;
  }

  double priority_beta(int64_t step) const {
    if (training_steps <= 0) return priority_beta_end;
    double f = static_cast<double>(step) / static_cast<double>(training_steps);
    if (f > 1.0) f = 1.0;
    return priority_beta_start + (priority_beta_end - priority_beta_start) * f;
  }

  double temperature(int64_t step) const {
    const double f =
        static_cast<double>(step) / static_cast<double>(training_steps);
    if (f < temperature_point1) return 1.0;
    if (f < temperature_point2) return temperature_value1;
    return temperature_value2;
  }
};

// Named profiles: "full" (the defaults above) and "toy" (desk scale).
RunConfig profile(const std::string& name);

// Layered load: profile defaults, then the key=value file, then EFFZERO_*
// environment variables. Empty path loads the profile alone.
RunConfig load_config(const std::string& path,
                      const std::string& profile_name = "full");

// Serializes every key; load(save(c)) reproduces c exactly.
std::string save_config(const RunConfig& c);
void save_config_file(const RunConfig& c, const std::string& path);

// FNV-1a over the canonical serialization.
uint64_t config_hash(const RunConfig& c);

// Parses one key=value pair into the config; throws ConfigError on unknown
// keys or unparseable values. Numeric values accept the a^b power form.
void apply_key_value(RunConfig& c, const std::string& key,
                     const std::string& value);

}  // namespace effzero
