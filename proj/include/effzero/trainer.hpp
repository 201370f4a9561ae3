#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "effzero/config.hpp"
#include "effzero/model.hpp"
#include "effzero/reanalyze.hpp"
#include "effzero/rng.hpp"

namespace effzero {

struct LossReport {
  double total = 0.0;            // differentiated loss
  double value_prefix_ce = 0.0;  // reward CE when the prefix head is off
  double policy_ce = 0.0;
  double value_ce = 0.0;
  double consistency = 0.0;
  double weight_decay_term = 0.0;  // c * ||theta||^2, applied inside the step
  double grad_norm = 0.0;          // pre-clip global norm
  double learning_rate = 0.0;
  int64_t saturations = 0;  // codec clamps while encoding targets
};

// Pixel shift with replicate padding plus an intensity scale, in place.
// Values stay in [0, 1]; di = dj = 0 with intensity 1 is the identity.
template <typename S>
void shift_and_scale(S* obs, int channels, int height, int width, int di,
                     int dj, double intensity) {
  std::vector<S> shifted(static_cast<size_t>(channels) * height * width);
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j) {
        int si = std::clamp(i - di, 0, height - 1);
        int sj = std::clamp(j - dj, 0, width - 1);
        double v = static_cast<double>(
                       obs[(static_cast<size_t>(c) * height + si) * width +
                           sj]) *
                   intensity;
        shifted[(static_cast<size_t>(c) * height + i) * width + j] =
            static_cast<S>(std::clamp(v, 0.0, 1.0));
      }
  std::copy(shifted.begin(), shifted.end(), obs);
}

// Random 0-4 pixel shift and intensity jitter for one stacked observation.
template <typename S>
void augment_observation(S* obs, int channels, int height, int width,
                         Rng& rng) {
  const int di = rng.uniform_int(9) - 4;
  const int dj = rng.uniform_int(9) - 4;
  const double intensity = 1.0 + 0.05 * std::clamp(rng.normal(), -2.0, 2.0);
  shift_and_scale(obs, channels, height, width, di, dj, intensity);
}

// Augments the representation/consistency inputs of a batch when the switch
// is on; a disabled switch leaves the batch bit-identical.
template <typename S>
void augment_batch(TrainBatchT<S>& batch, const ModelConfig& mc, Rng& rng,
                   bool enabled) {
  if (!enabled) return;
  const int C = mc.obs_channels, H = mc.obs_height, W = mc.obs_width;
  for (int b = 0; b < batch.batch; ++b) {
    augment_observation(
        batch.stacked_obs.data() + static_cast<int64_t>(b) * batch.obs_size,
        C, H, W, rng);
    for (int i = 0; i < batch.unroll; ++i) {
      if (!batch.obs_mask[static_cast<int64_t>(b) * batch.unroll + i])
        continue;
      augment_observation(
          batch.target_obs.data() +
              (static_cast<int64_t>(b) * batch.unroll + i) * batch.obs_size,
          C, H, W, rng);
    }
  }
}

template <typename S>
struct LossOutput {
  Tensor<S> loss;
  LossReport report;
  std::vector<S> value_l1;  // per-sample |decode(v_t) - z_t| for priorities
};

template <typename S>
std::vector<int> column_actions(const TrainBatchT<S>& batch, int i) {
  std::vector<int> a(batch.batch);
  for (int b = 0; b < batch.batch; ++b)
    a[b] = batch.actions[static_cast<int64_t>(b) * batch.unroll + i];
  return a;
}

// Unrolled loss of one batch:
//   (1/l) sum_i [ CE(prefix_i, R) + l1 CE(pi_i, p) + l2 CE(z_i, v)
//                 + l3 L_sim(s_{t+i+1}, shat_{t+i+1}) ]
// with per-sample importance weights multiplying every component. The
// consistency target branch runs the representation on the real next
// observations under stop-gradient; consistency_target substitutes a frozen
// model copy for that branch (gradient checks rely on this; production
// leaves it null and the branch runs through `model`).
template <typename S>
LossOutput<S> compute_losses(const TrainBatchT<S>& batch, ModelSetT<S>& model,
                             const RunConfig& cfg,
                             const ModelSetT<S>* consistency_target =
                                 nullptr) {
  const int B = batch.batch;
  const int U = batch.unroll;
  const int A = batch.action_count;
  const auto& codec = model.codec();
  const int bins = codec.bins();
  LossOutput<S> out;
  LossReport& rep = out.report;

  auto encode_targets = [&](const S* values) {
    std::vector<S> data(static_cast<int64_t>(B) * bins);
    for (int b = 0; b < B; ++b) {
      bool sat = false;
      const auto t = codec.encode(static_cast<double>(values[b]), &sat);
      if (sat) ++rep.saturations;
      for (int i = 0; i < bins; ++i)
        data[static_cast<int64_t>(b) * bins + i] = static_cast<S>(t[i]);
    }
    return Tensor<S>::from_data({B, bins}, std::move(data));
  };

  auto cross_entropy = [&](const Tensor<S>& target, const Tensor<S>& logits) {
    return scale(row_sum(mul(target, log_softmax_rows(logits))), S(-1));
  };

  auto obs = Tensor<S>::from_data({B, static_cast<int>(batch.obs_size)},
                                  batch.stacked_obs);
  auto weights = Tensor<S>::from_data({B}, batch.weights);

  auto column = [&](const std::vector<S>& flat, int i) {
    std::vector<S> v(B);
    for (int b = 0; b < B; ++b) v[b] = flat[static_cast<int64_t>(b) * U + i];
    return v;
  };
  auto policy_at = [&](int i) {
    std::vector<S> v(static_cast<int64_t>(B) * A);
    for (int b = 0; b < B; ++b)
      for (int a = 0; a < A; ++a)
        v[static_cast<int64_t>(b) * A + a] =
            batch.target_policy[(static_cast<int64_t>(b) * U + i) * A + a];
    return Tensor<S>::from_data({B, A}, std::move(v));
  };

  auto state = model.represent(obs);
  Tensor<S> v0_logits = model.predict_value(state);

  auto zero_vec = Tensor<S>::zeros({B});
  Tensor<S> acc_prefix = zero_vec;
  Tensor<S> acc_policy =
      cross_entropy(policy_at(0), model.predict_policy(state));
  Tensor<S> acc_value = cross_entropy(encode_targets(column(batch.target_value, 0).data()), v0_logits);
  Tensor<S> acc_cons = zero_vec;

  auto vp_state = model.fresh_vp_state(B);
  for (int i = 1; i <= U; ++i) {
    auto onehot = model.action_onehot(
        column_actions(batch, i - 1));
    state = model.dynamics(state, onehot);
    if (cfg.dynamics_grad_scale) state = scale_gradient(state, S(0.5));

    if (cfg.enable_value_prefix) {
      auto pre = model.predict_value_prefix(state, vp_state);
      vp_state = pre.state;
      acc_prefix = add(
          acc_prefix,
          cross_entropy(encode_targets(column(batch.target_prefix, i - 1).data()),
                        pre.logits));
    } else {
      acc_prefix = add(
          acc_prefix,
          cross_entropy(encode_targets(column(batch.target_reward, i - 1).data()),
                        model.predict_reward(state)));
    }

    if (i < U) {
      acc_policy = add(acc_policy, cross_entropy(policy_at(i),
                                                 model.predict_policy(state)));
      acc_value = add(
          acc_value,
          cross_entropy(encode_targets(column(batch.target_value, i).data()),
                        model.predict_value(state)));
    }

    if (cfg.enable_consistency) {
      std::vector<S> target_pixels(static_cast<int64_t>(B) * batch.obs_size);
      std::vector<S> mask(B);
      for (int b = 0; b < B; ++b) {
        mask[b] = static_cast<S>(
            batch.obs_mask[static_cast<int64_t>(b) * U + (i - 1)]);
        std::copy_n(batch.target_obs.begin() +
                        (static_cast<int64_t>(b) * U + (i - 1)) *
                            batch.obs_size,
                    batch.obs_size,
                    target_pixels.begin() +
                        static_cast<int64_t>(b) * batch.obs_size);
      }
      auto target_obs = Tensor<S>::from_data(
          {B, static_cast<int>(batch.obs_size)}, std::move(target_pixels));
      const ModelSetT<S>& tm = consistency_target ? *consistency_target : model;
      auto target_branch =
          tm.project(tm.represent(target_obs), /*with_predictor=*/false);
      auto online_branch = model.project(state, /*with_predictor=*/true);
      auto cos = row_sum(mul(l2_normalize_rows(target_branch),
                             l2_normalize_rows(online_branch)));
      auto masked = mul(scale(cos, S(-1)),
                        Tensor<S>::from_data({B}, std::move(mask)));
      acc_cons = add(acc_cons, masked);
    }
  }

  const S inv = S(1) / static_cast<S>(U);
  auto weighted_mean = [&](const Tensor<S>& per_sample) {
    return scale(mean_all(mul(per_sample, weights)), inv);
  };

  auto prefix_term = weighted_mean(acc_prefix);
  auto policy_term = weighted_mean(acc_policy);
  auto value_term = weighted_mean(acc_value);
  auto cons_term = weighted_mean(acc_cons);

  auto loss = add(prefix_term,
                  add(scale(policy_term, static_cast<S>(cfg.loss_lambda1)),
                      add(scale(value_term, static_cast<S>(cfg.loss_lambda2)),
                          scale(cons_term,
                                static_cast<S>(cfg.loss_lambda3)))));

  rep.value_prefix_ce = static_cast<double>(prefix_term.item());
  rep.policy_ce = static_cast<double>(policy_term.item());
  rep.value_ce = static_cast<double>(value_term.item());
  rep.consistency = static_cast<double>(cons_term.item());
  rep.total = static_cast<double>(loss.item());
  rep.weight_decay_term =
      cfg.weight_decay * static_cast<double>(model.params().squared_norm());

  if (!std::isfinite(rep.total))
    throw TensorError(
        "loss: non-finite total (prefix " + std::to_string(rep.value_prefix_ce) +
        ", policy " + std::to_string(rep.policy_ce) + ", value " +
        std::to_string(rep.value_ce) + ", consistency " +
        std::to_string(rep.consistency) + ")");

  out.value_l1.resize(B);
  for (int b = 0; b < B; ++b) {
    const double v = codec.decode_logits(v0_logits.data().data() +
                                         static_cast<int64_t>(b) * bins);
    out.value_l1[b] = static_cast<S>(std::abs(
        v - static_cast<double>(batch.target_value[static_cast<int64_t>(b) *
                                                   U])));
  }
  out.loss = loss;
  return out;
}

struct TrainStepResult {
  LossReport report;
  std::vector<float> value_l1;
};

// One optimization step: forward, backward, global-norm clip, momentum SGD
// with the scheduled learning rate.
inline TrainStepResult train_step(TrainBatch& batch, ModelSet& model,
                                  const RunConfig& cfg, int64_t step,
                                  Rng& rng) {
  model.set_train(true);
  augment_batch(batch, model.config(), rng, cfg.enable_data_augmentation);
  auto out = compute_losses(batch, model, cfg);
  model.params().zero_grad();
  out.loss.backward();
  const double lr = cfg.learning_rate(step);
  out.report.grad_norm = sgd_step(model.params(), lr, cfg.momentum,
                                  cfg.weight_decay, cfg.grad_clip_norm);
  out.report.learning_rate = lr;
  TrainStepResult res;
  res.report = out.report;
  res.value_l1 = std::move(out.value_l1);
  return res;
}

}  // namespace effzero
