#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "effzero/config.hpp"
#include "effzero/env.hpp"
#include "effzero/env_protocol.hpp"
#include "effzero/mcts.hpp"
#include "effzero/metrics.hpp"
#include "effzero/model.hpp"
#include "effzero/reanalyze.hpp"
#include "effzero/replay.hpp"
#include "effzero/trainer.hpp"

namespace effzero {

// Bounded MPMC queue; close() wakes all waiters and drains to nullopt.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(size_t capacity) : capacity_(capacity) {}

  bool push(T item) {
    std::unique_lock<std::mutex> lock(mu_);
    not_full_.wait(lock,
                   [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock<std::mutex> lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  size_t capacity_;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<T> items_;
  bool closed_ = false;
};

std::unique_ptr<Env> build_env(const RunConfig& cfg, uint64_t seed);

// Continuous segment production: every action comes from a full search at
// the training temperature; finished or full segments flush to the buffer
// with collection-step stamps.
class SelfPlayActor {
 public:
  SelfPlayActor(const RunConfig& cfg, ReplayBuffer& replay, uint64_t actor_id);

  // One environment transition against the given snapshot.
  void step_once(const ModelSet& snapshot, int64_t learner_step);
  // Hands any open partial segment to the buffer (episode continues in a
  // fresh segment on the next step). Called when collection pauses or the
  // budget runs out mid-episode.
  void flush_pending();
  int64_t env_steps() const { return env_steps_; }
  double last_episode_return() const { return last_return_; }

 private:
  void start_segment(bool fresh_episode);
  void flush_segment(bool terminal);

  const RunConfig& cfg_;
  ReplayBuffer& replay_;
  std::unique_ptr<Env> env_;
  SearchConfig search_;
  Rng rng_;
  FrameStacker stacker_;
  GameSegment segment_;
  bool episode_active_ = false;
  double episode_return_ = 0.0;
  double last_return_ = 0.0;
  int64_t env_steps_ = 0;
};

struct EvalResult {
  double mean_return = 0.0;
  double median_return = 0.0;
  std::vector<double> returns;
};

// Greedy evaluation: no exploration noise, argmax of root visits.
EvalResult evaluate(const ModelSet& model, const RunConfig& cfg, int episodes,
                    uint64_t eval_seed);

// (x - random) / (reference - random)
double normalized_score(double x, double random_score, double reference_score);

struct RunHooks {
  // Fractions of training progress at which to snapshot the replay buffer.
  std::vector<double> buffer_snapshots;
  std::function<void(int64_t, const EvalResult&)> on_eval;
};

struct RunArtifacts {
  std::string checkpoint_path;
  std::string metrics_path;
  int64_t learner_steps = 0;
  int64_t env_steps = 0;
  bool early_stopped = false;
  double final_eval_mean = 0.0;
  double final_eval_median = 0.0;
};

// Full training run per the configured topology. Serial mode interleaves
// actor -> context -> batch -> learner deterministically; parallel mode runs
// them as threads over bounded queues.
RunArtifacts run_training(const RunConfig& cfg, const std::string& out_dir,
                          const RunHooks& hooks = {});

std::string model_metadata_json(const RunConfig& cfg, int64_t step);
void save_model_checkpoint(const std::string& path, const ModelSet& model,
                           const RunConfig& cfg, int64_t step);
std::shared_ptr<ModelSet> load_model_checkpoint(const std::string& path,
                                                RunConfig* cfg_out = nullptr,
                                                std::string* env_name = nullptr);

}  // namespace effzero
