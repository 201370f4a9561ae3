#include "effzero/reanalyze.hpp"

#include <algorithm>
#include <cmath>

#include "effzero/formulas.hpp"

namespace effzero {

std::vector<float> stacked_at(const GameSegment& seg, int position,
                              int frames) {
  // Frames position-F+1 .. position; indices below -|prior_frames| repeat
  // the earliest available frame.
  const int prior = static_cast<int>(seg.prior_frames.size());
  std::vector<Observation> history;
  history.reserve(frames);
  for (int f = frames - 1; f >= 0; --f) {
    int idx = position - f;
    if (idx < -prior) idx = -prior;
    history.push_back(idx >= 0 ? seg.obs[idx] : seg.prior_frames[prior + idx]);
  }
  return stack_frames(history, frames).pixels;
}

// ---------------------------------------------------------------------------
// Stage one: contexts
// ---------------------------------------------------------------------------

BatchContext make_batch_context(ReplayBuffer& replay, const RunConfig& cfg,
                                int64_t t_current, Rng& rng) {
  BatchContext ctx;
  ctx.t_current = t_current;
  const double beta = cfg.priority_beta(t_current);
  SampleBatch sampled =
      replay.sample(cfg.batch_size, beta, cfg.min_replay_size, rng);

  const int unroll = cfg.unroll_steps;
  const int k = cfg.td_steps;
  ctx.samples.resize(sampled.indices.size());

  replay.with_transitions(sampled.indices, [&](const std::vector<
                                               ReplayBuffer::View>& views) {
    for (size_t b = 0; b < views.size(); ++b) {
      const auto& view = views[b];
      const GameSegment& seg = *view.segment;
      SampleContext& s = ctx.samples[b];
      s.flat_index = sampled.indices[b];
      s.weight = sampled.weights[b];
      s.t = view.offset;
      s.remaining = seg.length() - s.t;
      s.terminal = seg.terminal;
      s.collect_step = seg.collect_steps[s.t];

      s.actions.resize(unroll);
      for (int i = 0; i < unroll; ++i) {
        s.actions[i] = s.t + i < seg.length()
                           ? seg.actions[s.t + i]
                           : rng.uniform_int(
                                 static_cast<int>(seg.policies[0].size()));
      }
      const int reward_span = std::min(unroll - 1 + k, s.remaining);
      s.rewards.assign(seg.rewards.begin() + s.t,
                       seg.rewards.begin() + s.t + reward_span);
      s.stored_policies.resize(unroll);
      for (int i = 0; i < unroll && s.t + i < seg.length(); ++i)
        s.stored_policies[i] = seg.policies[s.t + i];

      const int max_offset = std::min(unroll - 1 + k, s.remaining);
      s.stacked.resize(max_offset + 1);
      for (int off = 0; off <= max_offset; ++off)
        s.stacked[off] = stacked_at(seg, s.t + off, cfg.frames_stacked);
    }
  });
  return ctx;
}

// ---------------------------------------------------------------------------
// Stage two: searches and assembly
// ---------------------------------------------------------------------------

namespace {

struct BootstrapSpec {
  int sample = 0;
  int position = 0;       // unroll index i
  int offset = 0;         // bootstrap offset from t (= i + horizon)
  bool valid = false;     // a bootstrap state exists
};

// Uniform policy used for absorbing targets.
void fill_uniform(float* dst, int n) {
  for (int i = 0; i < n; ++i) dst[i] = 1.0f / n;
}

}  // namespace

TrainBatch build_train_batch(const BatchContext& ctx, const ModelSet& target,
                             const RunConfig& cfg, Rng& rng) {
  const int B = static_cast<int>(ctx.samples.size());
  const int unroll = cfg.unroll_steps;
  const int k = cfg.td_steps;
  const int A = target.config().action_count;
  const int64_t obs_size = target.config().obs_size();
  const double gamma = cfg.discount;
  const int zeta = cfg.lstm_reset_horizon;

  TrainBatch tb;
  tb.batch = B;
  tb.unroll = unroll;
  tb.action_count = A;
  tb.obs_size = obs_size;
  tb.stacked_obs.resize(static_cast<int64_t>(B) * obs_size);
  tb.target_obs.assign(static_cast<int64_t>(B) * unroll * obs_size, 0.0f);
  tb.obs_mask.assign(static_cast<int64_t>(B) * unroll, 0);
  tb.actions.resize(static_cast<int64_t>(B) * unroll);
  tb.target_prefix.assign(static_cast<int64_t>(B) * unroll, 0.0f);
  tb.target_reward.assign(static_cast<int64_t>(B) * unroll, 0.0f);
  tb.target_value.assign(static_cast<int64_t>(B) * unroll, 0.0f);
  tb.target_policy.assign(static_cast<int64_t>(B) * unroll * A, 0.0f);
  tb.weights.resize(B);
  tb.indices.resize(B);
  tb.staleness.resize(B);

  for (int b = 0; b < B; ++b) {
    const SampleContext& s = ctx.samples[b];
    std::copy(s.stacked[0].begin(), s.stacked[0].end(),
              tb.stacked_obs.begin() + static_cast<int64_t>(b) * obs_size);
    tb.weights[b] = static_cast<float>(s.weight);
    tb.indices[b] = s.flat_index;
    tb.staleness[b] = ctx.t_current - s.collect_step;
    for (int i = 0; i < unroll; ++i)
      tb.actions[static_cast<int64_t>(b) * unroll + i] = s.actions[i];

    // Consistency target observations for positions t+1..t+unroll.
    for (int i = 1; i <= unroll; ++i) {
      if (i <= s.remaining) {
        std::copy(s.stacked[i].begin(), s.stacked[i].end(),
                  tb.target_obs.begin() +
                      (static_cast<int64_t>(b) * unroll + (i - 1)) * obs_size);
        tb.obs_mask[static_cast<int64_t>(b) * unroll + (i - 1)] = 1;
      }
    }

    // Value-prefix running sums (window reset aligned with the head) and
    // per-step reward targets.
    float prefix = 0.0f;
    for (int i = 1; i <= unroll; ++i) {
      if (i > 1 && (i - 1) % zeta == 0) prefix = 0.0f;
      const float u = i - 1 < static_cast<int>(s.rewards.size())
                          ? s.rewards[i - 1]
                          : 0.0f;
      const float u_in_window = i <= s.remaining ? u : 0.0f;
      prefix += u_in_window;
      tb.target_prefix[static_cast<int64_t>(b) * unroll + (i - 1)] = prefix;
      tb.target_reward[static_cast<int64_t>(b) * unroll + (i - 1)] =
          u_in_window;
    }
  }

  // --- value bootstraps ---
  std::vector<BootstrapSpec> boots(static_cast<size_t>(B) * unroll);
  std::vector<float> boot_obs;
  std::vector<std::pair<int, int>> boot_rows;  // (sample, unroll position)
  for (int b = 0; b < B; ++b) {
    const SampleContext& s = ctx.samples[b];
    for (int i = 0; i < unroll; ++i) {
      BootstrapSpec& spec = boots[static_cast<size_t>(b) * unroll + i];
      spec.sample = b;
      spec.position = i;
      if (i >= s.remaining) continue;  // absorbing, z = 0
      int horizon = cfg.enable_off_policy_correction
                        ? compute_horizon(ctx.t_current, s.collect_step, k,
                                          cfg.horizon_tau, cfg.training_steps)
                        : k;
      horizon = std::min(horizon, s.remaining - i);
      spec.offset = i + horizon;
      // The state after the last reward: no bootstrap past a terminal end.
      spec.valid = !(s.terminal && spec.offset >= s.remaining);
      if (spec.valid && spec.offset >= static_cast<int>(s.stacked.size())) {
        // Observation missing (should not happen with per-segment storage);
        // fall back to the last stored state and log it.
        spec.offset = static_cast<int>(s.stacked.size()) - 1;
        ++tb.bootstrap_fallbacks;
      }
      if (spec.valid) {
        boot_rows.emplace_back(b, i);
        boot_obs.insert(boot_obs.end(), s.stacked[spec.offset].begin(),
                        s.stacked[spec.offset].end());
      }
    }
  }

  std::vector<double> boot_values(boot_rows.size(), 0.0);
  if (!boot_rows.empty()) {
    if (cfg.enable_off_policy_correction) {
      // Fresh searches with re-sampled noise; the mean backed-up root value
      // is the bootstrap.
      SearchConfig sc = SearchConfig::from_run(cfg);
      NetworkSearchModel sm(target);
      auto results = run_batch(sm, boot_obs.data(),
                               static_cast<int>(boot_rows.size()), obs_size,
                               NoiseMode::kReanalyze, sc, rng);
      for (size_t i = 0; i < results.size(); ++i)
        boot_values[i] = results[i].value;
    } else {
      // Target-network value head only.
      NoGradGuard ng;
      const int rows = static_cast<int>(boot_rows.size());
      auto x = Tensor<float>::from_data({rows, static_cast<int>(obs_size)},
                                        boot_obs);
      auto latent = target.represent(x);
      auto logits = target.predict_value(latent);
      const auto& codec = target.codec();
      for (int i = 0; i < rows; ++i)
        boot_values[i] = codec.decode_logits(
            logits.data().data() + static_cast<int64_t>(i) * codec.bins());
    }
  }
  // Assemble value targets.
  {
    size_t row = 0;
    for (int b = 0; b < B; ++b) {
      const SampleContext& s = ctx.samples[b];
      for (int i = 0; i < unroll; ++i) {
        const BootstrapSpec& spec = boots[static_cast<size_t>(b) * unroll + i];
        if (i >= s.remaining) {
          tb.target_value[static_cast<int64_t>(b) * unroll + i] = 0.0f;
          continue;
        }
        std::vector<double> rewards;
        for (int j = i; j < spec.offset && j < static_cast<int>(s.rewards.size());
             ++j)
          rewards.push_back(s.rewards[j]);
        double bootstrap = 0.0;
        if (spec.valid) {
          bootstrap = boot_values[row];
          ++row;
        }
        tb.target_value[static_cast<int64_t>(b) * unroll + i] =
            static_cast<float>(
                compute_value_target(rewards, gamma, bootstrap, spec.valid));
      }
    }
  }

  // --- policy targets ---
  const int n_reanalyze =
      static_cast<int>(std::llround(cfg.reanalyze_policy_ratio * B));
  std::vector<float> policy_obs;
  std::vector<std::pair<int, int>> policy_rows;
  for (int b = 0; b < B; ++b) {
    const SampleContext& s = ctx.samples[b];
    for (int i = 0; i < unroll; ++i) {
      float* dst =
          tb.target_policy.data() + (static_cast<int64_t>(b) * unroll + i) * A;
      if (i >= s.remaining) {
        fill_uniform(dst, A);  // absorbing
        continue;
      }
      if (b < n_reanalyze) {
        policy_rows.emplace_back(b, i);
        policy_obs.insert(policy_obs.end(), s.stacked[i].begin(),
                          s.stacked[i].end());
      } else {
        const auto& stored = s.stored_policies[i];
        std::copy(stored.begin(), stored.end(), dst);
      }
    }
  }
  if (!policy_rows.empty()) {
    SearchConfig sc = SearchConfig::from_run(cfg);
    NetworkSearchModel sm(target);
    auto results =
        run_batch(sm, policy_obs.data(), static_cast<int>(policy_rows.size()),
                  obs_size, NoiseMode::kReanalyze, sc, rng);
    for (size_t r = 0; r < policy_rows.size(); ++r) {
      const auto& [b, i] = policy_rows[r];
      float* dst =
          tb.target_policy.data() + (static_cast<int64_t>(b) * unroll + i) * A;
      for (int a = 0; a < A; ++a)
        dst[a] = static_cast<float>(results[r].policy[a]);
    }
  }

  return tb;
}

// ---------------------------------------------------------------------------
// Value-error diagnostic
// ---------------------------------------------------------------------------

namespace {

// Monte-Carlo return of the network's softmax policy from a restored state,
// batched over rollouts. The environment is deterministic, so stochasticity
// comes from the sampled policy alone.
double mc_ground_truth(const Observation& state_obs, const ModelSet& model,
                       const RunConfig& cfg, const std::string& env_name,
                       int env_size, int rollouts, Rng& rng, bool* ok) {
  auto env = make_env(env_name, env_size, 0);
  if (!env->restore(state_obs)) {
    *ok = false;
    return 0.0;
  }
  *ok = true;
  const int frames = cfg.frames_stacked;
  const int A = env->action_count();

  double total = 0.0;
  NoGradGuard ng;
  for (int m = 0; m < rollouts; ++m) {
    env->restore(state_obs);
    FrameStacker stacker(frames);
    stacker.reset(state_obs);
    double ret = 0.0;
    double g = 1.0;
    for (int step = 0; step < 10000; ++step) {
      auto stacked = stacker.stacked();
      auto x = Tensor<float>::from_data(
          {1, static_cast<int>(stacked.size())}, stacked.pixels);
      auto latent = model.represent(x);
      auto logits = model.predict_policy(latent);
      auto probs = softmax_rows(logits);
      std::vector<double> p(A);
      for (int a = 0; a < A; ++a) p[a] = probs.data()[a];
      const int action = rng.categorical(p);
      auto r = env->step(action);
      ret += g * r.reward;
      g *= cfg.discount;
      if (r.done) break;
      stacker.push(r.observation);
    }
    total += ret;
  }
  return total / rollouts;
}

}  // namespace

ValueErrorReport measure_value_error(const std::vector<GameSegment>& segments,
                                     const ModelSet& model,
                                     const RunConfig& cfg,
                                     bool correction_enabled,
                                     int64_t t_current, int max_samples,
                                     int mc_rollouts, Rng& rng) {
  RunConfig local = cfg;
  local.enable_off_policy_correction = correction_enabled;
  const int unroll = cfg.unroll_steps;
  const int k = cfg.td_steps;

  ValueErrorReport rep;
  double err_current = 0.0, err_unrolled = 0.0;
  int64_t n_current = 0, n_unrolled = 0;

  // Build contexts directly from the snapshot segments.
  for (const auto& seg : segments) {
    if (rep.states >= max_samples) break;
    for (int t = 0; t < seg.length() && rep.states < max_samples; ++t) {
      SampleContext s;
      s.flat_index = 0;
      s.weight = 1.0;
      s.t = t;
      s.remaining = seg.length() - t;
      s.terminal = seg.terminal;
      s.collect_step = seg.collect_steps[t];
      s.actions.resize(unroll);
      for (int i = 0; i < unroll; ++i)
        s.actions[i] = t + i < seg.length() ? seg.actions[t + i] : 0;
      const int reward_span = std::min(unroll - 1 + k, s.remaining);
      s.rewards.assign(seg.rewards.begin() + t,
                       seg.rewards.begin() + t + reward_span);
      s.stored_policies.assign(unroll, std::vector<float>());
      for (int i = 0; i < unroll && t + i < seg.length(); ++i)
        s.stored_policies[i] = seg.policies[t + i];
      const int max_offset = std::min(unroll - 1 + k, s.remaining);
      s.stacked.resize(max_offset + 1);
      for (int off = 0; off <= max_offset; ++off)
        s.stacked[off] = stacked_at(seg, t + off, cfg.frames_stacked);

      BatchContext ctx;
      ctx.t_current = t_current;
      ctx.samples.push_back(std::move(s));
      local.reanalyze_policy_ratio = 0.0;  // only value targets needed
      TrainBatch tb = build_train_batch(ctx, model, local, rng);

      // Ground truth per unroll position from the stored observations.
      for (int i = 0; i < unroll; ++i) {
        if (t + i >= seg.length()) break;
        bool ok = false;
        const double truth =
            mc_ground_truth(seg.obs[t + i], model, cfg, cfg.env_name,
                            cfg.env_size, mc_rollouts, rng, &ok);
        if (!ok) continue;
        const double err = std::abs(
            static_cast<double>(tb.target_value[i]) - truth);
        if (i == 0) {
          err_current += err;
          ++n_current;
        } else {
          err_unrolled += err;
          ++n_unrolled;
        }
      }
      ++rep.states;
    }
  }

  rep.current_state = n_current ? err_current / n_current : 0.0;
  rep.unrolled = n_unrolled ? err_unrolled / n_unrolled : 0.0;
  rep.all_states = (n_current + n_unrolled)
                       ? (err_current + err_unrolled) / (n_current + n_unrolled)
                       : 0.0;
  return rep;
}

}  // namespace effzero
