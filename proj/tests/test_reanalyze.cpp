#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "effzero/formulas.hpp"
#include "effzero/reanalyze.hpp"
#include "effzero/trainer.hpp"

using namespace effzero;

namespace {

RunConfig tiny_cfg() {
  RunConfig cfg = profile("toy");
  cfg.env_name = "catcher";
  cfg.env_size = 5;
  cfg.batch_size = 4;
  cfg.num_simulations = 4;
  cfg.min_replay_size = 4;
  cfg.latent_dim = 12;
  cfg.rep_hidden = 16;
  cfg.lstm_hidden = 8;
  cfg.head_hidden = 6;
  cfg.proj_dim = 10;
  cfg.proj_hidden = 8;
  cfg.support_half_width = 10;
  cfg.support_bins = 21;
  cfg.validate();
  return cfg;
}

ModelConfig model_cfg(const RunConfig& cfg) {
  return ModelConfig::from_run(cfg, 2, 5, 5, 3);
}

GameSegment script_segment(const std::vector<float>& rewards, bool terminal,
                           int64_t collect_step) {
  GameSegment s;
  Observation o;
  o.channels = 2;
  o.height = 5;
  o.width = 5;
  const int t = static_cast<int>(rewards.size());
  for (int i = 0; i <= t; ++i) {
    o.pixels.assign(50, 0.0f);
    o.pixels[i % 25] = 1.0f;                    // fruit plane marker
    o.pixels[25 + 20 + (i * 2) % 5] = 1.0f;     // paddle on the bottom row
    s.obs.push_back(o);
  }
  for (int i = 0; i < t; ++i) {
    s.actions.push_back(i % 3);
    s.rewards.push_back(rewards[i]);
    s.policies.push_back({0.5f, 0.3f, 0.2f});
    s.root_values.push_back(0.25f);
    s.collect_steps.push_back(collect_step);
  }
  s.terminal = terminal;
  return s;
}

double net_value(const ModelSet& model, const std::vector<float>& stacked) {
  NoGradGuard ng;
  auto x = Tensor<float>::from_data({1, static_cast<int>(stacked.size())},
                                    stacked);
  auto logits = model.predict_value(model.represent(x));
  return model.codec().decode_logits(logits.data().data());
}

}  // namespace

TEST_CASE("reanalyze: classic n-step targets match a straight-line oracle") {
  RunConfig cfg = tiny_cfg();
  cfg.enable_off_policy_correction = false;
  cfg.reanalyze_policy_ratio = 0.0;

  ModelSet model(model_cfg(cfg), 3);
  model.set_train(false);
  ReplayBuffer replay(1000, cfg.priority_alpha);
  const std::vector<float> rewards = {1.0f, 0.0f, -1.0f, 0.5f, 0.25f, 0.0f,
                                      1.0f, 0.0f};
  GameSegment seg = script_segment(rewards, /*terminal=*/false, 0);
  replay.append(seg);

  Rng rng(3);
  BatchContext ctx = make_batch_context(replay, cfg, 100, rng);
  TrainBatch batch = build_train_batch(ctx, model, cfg, rng);

  const int T = static_cast<int>(rewards.size());
  for (int b = 0; b < batch.batch; ++b) {
    const int t = ctx.samples[b].t;
    for (int i = 0; i < batch.unroll; ++i) {
      const int p = t + i;
      double expected = 0.0;
      if (p < T) {
        const int l = std::min(cfg.td_steps, T - p);
        double g = 1.0;
        for (int j = 0; j < l; ++j) {
          expected += g * rewards[p + j];
          g *= cfg.discount;
        }
        // non-terminal cut: bootstrap with the raw network value
        expected += g * net_value(model, stacked_at(seg, p + l,
                                                    cfg.frames_stacked));
      }
      CHECK(batch.target_value[b * batch.unroll + i] ==
            doctest::Approx(expected).epsilon(1e-4));

      // stored policies pass through untouched when nothing is reanalyzed
      if (p < T) {
        CHECK(batch.target_policy[(b * batch.unroll + i) * 3 + 0] ==
              doctest::Approx(0.5f));
      } else {
        CHECK(batch.target_policy[(b * batch.unroll + i) * 3 + 0] ==
              doctest::Approx(1.0f / 3));
        CHECK(batch.target_value[b * batch.unroll + i] == 0.0f);
        CHECK(batch.target_reward[b * batch.unroll + i] == 0.0f);
        CHECK(batch.obs_mask[b * batch.unroll + i] == 0);
      }
    }
  }
}

TEST_CASE("reanalyze: terminal segments drop the bootstrap") {
  RunConfig cfg = tiny_cfg();
  cfg.enable_off_policy_correction = false;
  cfg.reanalyze_policy_ratio = 0.0;
  ModelSet model(model_cfg(cfg), 5);
  model.set_train(false);
  ReplayBuffer replay(1000, cfg.priority_alpha);
  const std::vector<float> rewards = {0.0f, 0.0f, 0.0f, 1.0f};
  replay.append(script_segment(rewards, /*terminal=*/true, 0));

  cfg.batch_size = 8;
  cfg.min_replay_size = 4;
  Rng rng(9);
  BatchContext ctx = make_batch_context(replay, cfg, 0, rng);
  TrainBatch batch = build_train_batch(ctx, model, cfg, rng);
  for (int b = 0; b < batch.batch; ++b) {
    const int t = ctx.samples[b].t;
    for (int i = 0; i < batch.unroll && t + i < 4; ++i) {
      double expected = 0.0;
      double g = 1.0;
      for (int j = t + i; j < 4; ++j) {
        expected += g * rewards[j];
        g *= cfg.discount;
      }
      CHECK(batch.target_value[b * batch.unroll + i] ==
            doctest::Approx(expected).epsilon(1e-5));
    }
  }
}

TEST_CASE("reanalyze: deterministic given the seed") {
  RunConfig cfg = tiny_cfg();
  ModelSet model(model_cfg(cfg), 7);
  model.set_train(false);
  ReplayBuffer replay(1000, cfg.priority_alpha);
  replay.append(script_segment({1, 0, 0, 1, 0, 0}, false, 0));
  replay.append(script_segment({0, 0, 1, 0}, true, 3));

  auto build = [&] {
    Rng rng(11);
    BatchContext ctx = make_batch_context(replay, cfg, 50, rng);
    return build_train_batch(ctx, model, cfg, rng);
  };
  TrainBatch a = build();
  TrainBatch b = build();
  CHECK(a.indices == b.indices);
  CHECK(a.target_value == b.target_value);
  CHECK(a.target_policy == b.target_policy);
  CHECK(a.target_prefix == b.target_prefix);
  CHECK(a.actions == b.actions);
  CHECK(a.weights == b.weights);
}

TEST_CASE("reanalyze: value-prefix targets are window-reset running sums") {
  RunConfig cfg = tiny_cfg();
  cfg.enable_off_policy_correction = false;
  cfg.reanalyze_policy_ratio = 0.0;
  cfg.unroll_steps = 5;
  cfg.lstm_reset_horizon = 2;  // reset inside the unroll
  ModelSet model(model_cfg(cfg), 13);
  model.set_train(false);
  ReplayBuffer replay(1000, cfg.priority_alpha);
  const std::vector<float> rewards = {1.0f, 2.0f, 4.0f, 8.0f, 16.0f, 32.0f,
                                      64.0f, 128.0f};
  replay.append(script_segment(rewards, false, 0));

  Rng rng(17);
  BatchContext ctx = make_batch_context(replay, cfg, 0, rng);
  TrainBatch batch = build_train_batch(ctx, model, cfg, rng);
  for (int b = 0; b < batch.batch; ++b) {
    const int t = ctx.samples[b].t;
    float prefix = 0.0f;
    for (int i = 1; i <= batch.unroll; ++i) {
      if (i > 1 && (i - 1) % 2 == 0) prefix = 0.0f;  // zeta = 2 window
      const int p = t + i - 1;
      const float u = p < 8 ? rewards[p] : 0.0f;
      prefix += u;
      CHECK(batch.target_prefix[b * batch.unroll + (i - 1)] ==
            doctest::Approx(prefix));
      CHECK(batch.target_reward[b * batch.unroll + (i - 1)] ==
            doctest::Approx(u));
    }
  }
}

TEST_CASE("reanalyze: dynamic horizon shortens stale value windows") {
  RunConfig cfg = tiny_cfg();
  cfg.reanalyze_policy_ratio = 0.0;
  cfg.training_steps = 1000;
  ModelSet model(model_cfg(cfg), 19);
  model.set_train(false);
  ReplayBuffer replay(1000, cfg.priority_alpha);
  const std::vector<float> rewards = {1, 1, 1, 1, 1, 1, 1, 1};
  replay.append(script_segment(rewards, false, 0));  // collected at step 0

  // age = T_total => l = k - floor(1/0.3) = 2
  CHECK(compute_horizon(1000, 0, cfg.td_steps, cfg.horizon_tau, 1000) == 2);

  Rng rng(23);
  BatchContext ctx = make_batch_context(replay, cfg, 1000, rng);
  TrainBatch batch = build_train_batch(ctx, model, cfg, rng);
  // correction path: bootstrap after two observed rewards (fresh searches),
  // so target >= 1 + gamma while the five-step pure reward sum is larger
  for (int b = 0; b < batch.batch; ++b) {
    CHECK(batch.staleness[b] == 1000);
    const int t = ctx.samples[b].t;
    if (t + 2 <= 7) {
      const double two_rewards = 1.0 + cfg.discount;
      CHECK(batch.target_value[b * batch.unroll] >= two_rewards - 1e-4);
    }
  }
  CHECK(batch.bootstrap_fallbacks == 0);
}

TEST_CASE("reanalyze: stacking honors prior frames across segment cuts") {
  GameSegment seg = script_segment({1, 0}, false, 0);
  Observation marker;
  marker.channels = 2;
  marker.height = 5;
  marker.width = 5;
  marker.pixels.assign(50, 0.0f);
  marker.pixels[7] = 1.0f;
  seg.prior_frames.push_back(marker);

  const auto stacked = stacked_at(seg, 0, 4);
  // frames: [marker padded, marker padded, marker, obs0] oldest first
  CHECK(stacked.size() == 200);
  CHECK(stacked[7] == doctest::Approx(1.0f));        // padding repeats marker
  CHECK(stacked[50 + 7] == doctest::Approx(1.0f));
  CHECK(stacked[100 + 7] == doctest::Approx(1.0f));  // the marker itself
  CHECK(stacked[150 + 0] == doctest::Approx(1.0f));  // obs0 fruit at cell 0
}
