#pragma once

#include <cstdint>
#include <vector>

#include "effzero/config.hpp"
#include "effzero/mcts.hpp"
#include "effzero/model.hpp"
#include "effzero/replay.hpp"

namespace effzero {

// Training batch, ready for the loss. Value/policy targets cover unroll
// positions t..t+l_unroll-1; prefix/reward targets cover the l_unroll
// unrolled edges; target observations feed the consistency branch at
// positions t+1..t+l_unroll.
template <typename S>
struct TrainBatchT {
  int batch = 0;
  int unroll = 0;
  int action_count = 0;
  int64_t obs_size = 0;

  std::vector<S> stacked_obs;     // [B, obs_size]
  std::vector<S> target_obs;      // [B, unroll, obs_size]
  std::vector<uint8_t> obs_mask;  // [B, unroll]; 0 past the episode end
  std::vector<int> actions;       // [B, unroll]
  std::vector<S> target_prefix;   // [B, unroll] within-window running sums
  std::vector<S> target_reward;   // [B, unroll] per-step rewards
  std::vector<S> target_value;    // [B, unroll]
  std::vector<S> target_policy;   // [B, unroll, A]
  std::vector<S> weights;         // [B]
  std::vector<int64_t> indices;   // [B]
  std::vector<int64_t> staleness; // [B], T_current - T_s
  int64_t bootstrap_fallbacks = 0;  // missing obs, fell back to net value
};

using TrainBatch = TrainBatchT<float>;

// Everything one sample needs for target building, copied out of the buffer
// so the search-heavy stage runs without holding the replay lock.
struct SampleContext {
  int64_t flat_index = 0;
  double weight = 1.0;
  int64_t collect_step = 0;
  int t = 0;               // position within the segment
  int remaining = 0;       // T - t, transitions from t to the segment end
  bool terminal = false;   // segment ends the episode
  std::vector<int> actions;            // t .. t+unroll-1, padded randomly
  std::vector<float> rewards;          // t .. min(T, t+unroll-1+k)
  std::vector<std::vector<float>> stored_policies;  // positions t..t+unroll-1
  // stacked observations for positions t .. t + max_offset (clamped to T)
  std::vector<std::vector<float>> stacked;
};

struct BatchContext {
  std::vector<SampleContext> samples;
  int64_t t_current = 0;
};

// Stage one: sample indices and slice contexts (replay lock held briefly).
BatchContext make_batch_context(ReplayBuffer& replay, const RunConfig& cfg,
                                int64_t t_current, Rng& rng);

// Stage two: fresh searches with the target model and target assembly.
TrainBatch build_train_batch(const BatchContext& ctx, const ModelSet& target,
                             const RunConfig& cfg, Rng& rng);

// Stacked observation at position p of a segment (frame padding inside the
// segment, honoring prior_frames carried across segment boundaries).
std::vector<float> stacked_at(const GameSegment& seg, int position,
                              int frames);

// Value-error diagnostic against Monte-Carlo ground truth of the current
// policy; mirrors the three-column target-error report.
struct ValueErrorReport {
  double current_state = 0.0;   // positions t
  double unrolled = 0.0;        // positions t+1 .. t+l_unroll
  double all_states = 0.0;
  int64_t states = 0;
};

ValueErrorReport measure_value_error(const std::vector<GameSegment>& segments,
                                     const ModelSet& model,
                                     const RunConfig& cfg,
                                     bool correction_enabled,
                                     int64_t t_current, int max_samples,
                                     int mc_rollouts, Rng& rng);

}  // namespace effzero
