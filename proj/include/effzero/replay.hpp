#pragma once

#include <cstdint>
#include <deque>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "effzero/env.hpp"
#include "effzero/rng.hpp"

namespace effzero {

struct ReplayError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One stretch of a rollout, at most segment_length transitions. Holds the
// observation after the last transition as well, so obs has length T+1.
// When an episode spans several segments the later segments continue with
// the boundary observation as obs[0].
struct GameSegment {
  std::vector<Observation> obs;             // T + 1
  std::vector<int> actions;                 // T
  std::vector<float> rewards;               // T, clipped per config
  std::vector<std::vector<float>> policies; // T, search visit distributions
  std::vector<float> root_values;           // T
  std::vector<int64_t> collect_steps;       // T, learner step at collection
  bool terminal = false;  // the episode ended at obs[T]
  // Frames immediately before obs[0] when the episode started in an earlier
  // segment; keeps frame stacking exact across segment boundaries.
  std::vector<Observation> prior_frames;

  int length() const { return static_cast<int>(actions.size()); }
  void validate() const;
};

// Proportional sampler over p_i^alpha with a binary sum tree; exact
// probabilities are exposed for oracle checks.
class SumTree {
 public:
  void push(double weight);
  void update(size_t i, double weight);
  double total() const { return size_ ? tree_[1] : 0.0; }
  size_t size() const { return size_; }
  double weight(size_t i) const { return leaf(i); }
  // Index with cumulative weight covering `mass` in [0, total).
  size_t find(double mass) const;

 private:
  double leaf(size_t i) const { return tree_[offset_ + i]; }
  void rebuild(size_t capacity);

  std::vector<double> tree_;
  size_t size_ = 0;
  size_t offset_ = 0;
};

struct SampleBatch {
  std::vector<int64_t> indices;  // flat transition ids
  std::vector<double> weights;   // importance weights, max-normalized
};

// Segment store with prioritized transition sampling. Thread safety is one
// coarse mutex; actors append while reanalyze samples and the learner
// updates priorities.
class ReplayBuffer {
 public:
  ReplayBuffer(int64_t capacity, double priority_alpha)
      : capacity_(capacity), alpha_(priority_alpha) {}

  void append(GameSegment segment);
  int64_t transition_count() const;
  int64_t total_appended() const;

  // Draws batch_size transitions with probability p_i^alpha / sum. Throws
  // if fewer than min_size transitions are stored.
  SampleBatch sample(int batch_size, double beta, int64_t min_size, Rng& rng);

  void update_priorities(const std::vector<int64_t>& indices,
                         const std::vector<float>& value_errors);

  double probability(int64_t index) const;  // P(i), exact
  double max_priority() const;

  // Copies out one transition's context; see reanalyze.
  struct View {
    const GameSegment* segment = nullptr;
    int offset = 0;        // position within the segment
    int64_t flat_index = 0;
  };
  // Resolves flat ids to (segment, offset) under the lock and hands them to
  // the callback while the lock is held.
  template <typename Fn>
  void with_transitions(const std::vector<int64_t>& indices, Fn&& fn) const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<View> views;
    views.reserve(indices.size());
    for (int64_t id : indices) views.push_back(resolve(id));
    fn(views);
  }

  template <typename Fn>
  void with_all_segments(Fn&& fn) const {
    std::lock_guard<std::mutex> lock(mu_);
    fn(segments_);
  }

  static constexpr double kPriorityFloor = 1e-6;

 private:
  View resolve(int64_t flat_index) const;

  int64_t capacity_;
  double alpha_;
  mutable std::mutex mu_;
  std::deque<GameSegment> segments_;
  std::deque<int64_t> segment_base_;  // flat id of each segment's first move
  int64_t next_flat_id_ = 0;
  int64_t evicted_transitions_ = 0;
  std::deque<float> priorities_;  // raw p_i per live transition
  SumTree tree_;                  // p_i^alpha, aligned with priorities_
  int64_t tree_evicted_ = 0;      // leading dead leaves kept at weight 0
  double max_priority_ = 1.0;
  bool any_priority_ = false;
};

// Binary snapshot of the whole buffer for the value-error diagnostic.
void write_buffer_snapshot(const std::string& path, const ReplayBuffer& rb,
                           const std::string& metadata);
struct BufferSnapshot {
  std::string metadata;
  std::vector<GameSegment> segments;
};
BufferSnapshot read_buffer_snapshot(const std::string& path);

}  // namespace effzero
