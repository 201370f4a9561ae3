#pragma once

#include <deque>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "effzero/rng.hpp"

namespace effzero {

struct EnvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Image observation, CHW layout, values in [0, 1].
struct Observation {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  int64_t size() const {
    return static_cast<int64_t>(channels) * height * width;
  }
  float& at(int c, int i, int j) {
    return pixels[(static_cast<int64_t>(c) * height + i) * width + j];
  }
  float at(int c, int i, int j) const {
    return pixels[(static_cast<int64_t>(c) * height + i) * width + j];
  }
  bool operator==(const Observation& o) const {
    return channels == o.channels && height == o.height && width == o.width &&
           pixels == o.pixels;
  }
};

struct StepResult {
  Observation observation;
  float reward = 0.0f;
  bool done = false;
};

// Deterministic episodic environment. Per-episode randomness is derived from
// (seed, episode index); the episode index advances only when an episode
// terminates, so reset() before any step reproduces the same initial state.
class Env {
 public:
  virtual ~Env() = default;
  virtual int action_count() const = 0;
  virtual int channels() const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;
  virtual Observation reset() = 0;
  virtual StepResult step(int action) = 0;
  virtual std::string name() const = 0;
  // Re-enters the mid-episode state a rendered observation encodes. Returns
  // false when the observation does not identify a live state (terminal or
  // unsupported env). Used by diagnostics that replay stored trajectories.
  virtual bool restore(const Observation& obs) { (void)obs; return false; }
};

// One falling fruit over a paddle. Actions {left, stay, right}; the episode
// lasts height-1 steps, ending with +1 if the paddle sits under the fruit
// and -1 otherwise.
class CatcherEnv : public Env {
 public:
  CatcherEnv(int width, int height, uint64_t seed);

  int action_count() const override { return 3; }
  int channels() const override { return 2; }
  int height() const override { return h_; }
  int width() const override { return w_; }
  Observation reset() override;
  StepResult step(int action) override;
  std::string name() const override { return "catcher"; }
  bool restore(const Observation& obs) override;

  // Exact mean return of a fruit-blind (e.g. uniform) policy: the fruit
  // column is uniform and independent of the paddle, so any such policy
  // catches with probability 1/width.
  static double uniform_play_return(int width) { return 2.0 / width - 1.0; }

 private:
  Observation render() const;

  int w_, h_;
  uint64_t seed_;
  uint64_t episode_ = 0;
  bool in_progress_ = false;
  bool done_ = true;
  int fruit_row_ = 0, fruit_col_ = 0, paddle_col_ = 0;
};

// Hard-exploration N x N descent. Actions {left, right}; episodes last N
// steps. Each "right" costs 0.01/N and the bottom-right treasure pays +1,
// reachable only by N consecutive rights.
class DeepSeaEnv : public Env {
 public:
  DeepSeaEnv(int n, uint64_t seed);

  int action_count() const override { return 2; }
  int channels() const override { return 1; }
  int height() const override { return n_; }
  int width() const override { return n_; }
  Observation reset() override;
  StepResult step(int action) override;
  std::string name() const override { return "deep_sea"; }
  bool restore(const Observation& obs) override;

  int row() const { return row_; }
  int col() const { return col_; }
  double move_cost() const { return 0.01 / n_; }

 private:
  Observation render() const;

  int n_;
  int row_ = 0, col_ = 0;
  bool done_ = true;
};

std::unique_ptr<Env> make_env(const std::string& name, int size,
                              uint64_t seed);

// Channel concatenation of the last F observations, oldest first; missing
// history is padded by repeating the earliest frame.
struct FrameStacker {
  int frames;
  std::deque<Observation> history;

  explicit FrameStacker(int f) : frames(f) {
    if (f < 1) throw EnvError("frame stack: F must be >= 1");
  }

  void reset(const Observation& first) {
    history.clear();
    history.push_back(first);
  }

  void push(const Observation& obs) {
    history.push_back(obs);
    while (static_cast<int>(history.size()) > frames) history.pop_front();
  }

  Observation stacked() const;
};

Observation stack_frames(const std::vector<Observation>& history, int frames);

}  // namespace effzero
