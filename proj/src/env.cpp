#include "effzero/env.hpp"

namespace effzero {

namespace {

Observation blank(int c, int h, int w) {
  Observation o;
  o.channels = c;
  o.height = h;
  o.width = w;
  o.pixels.assign(static_cast<int64_t>(c) * h * w, 0.0f);
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Catcher
// ---------------------------------------------------------------------------

CatcherEnv::CatcherEnv(int width, int height, uint64_t seed)
    : w_(width), h_(height), seed_(seed) {
  if (width < 2 || height < 2) throw EnvError("catcher: grid must be >= 2x2");
}

Observation CatcherEnv::reset() {
  Rng rng = Rng::derive(seed_, episode_);
  fruit_row_ = 0;
  fruit_col_ = rng.uniform_int(w_);
  paddle_col_ = w_ / 2;
  done_ = false;
  in_progress_ = true;
  return render();
}

StepResult CatcherEnv::step(int action) {
  if (done_ || !in_progress_) throw EnvError("catcher: step after done");
  if (action < 0 || action >= 3)
    throw EnvError("catcher: action " + std::to_string(action) +
                   " out of range [0,3)");
  paddle_col_ += action - 1;
  if (paddle_col_ < 0) paddle_col_ = 0;
  if (paddle_col_ >= w_) paddle_col_ = w_ - 1;
  fruit_row_ += 1;

  StepResult r;
  if (fruit_row_ >= h_ - 1) {
    r.reward = fruit_col_ == paddle_col_ ? 1.0f : -1.0f;
    r.done = true;
    done_ = true;
    in_progress_ = false;
    ++episode_;
  }
  r.observation = render();
  return r;
}

Observation CatcherEnv::render() const {
  Observation o = blank(2, h_, w_);
  o.at(0, fruit_row_, fruit_col_) = 1.0f;
  o.at(1, h_ - 1, paddle_col_) = 1.0f;
  return o;
}

bool CatcherEnv::restore(const Observation& obs) {
  if (obs.channels != 2 || obs.height != h_ || obs.width != w_) return false;
  int frow = -1, fcol = -1, pcol = -1;
  for (int i = 0; i < h_; ++i)
    for (int j = 0; j < w_; ++j) {
      if (obs.at(0, i, j) > 0.5f) {
        frow = i;
        fcol = j;
      }
      if (obs.at(1, h_ - 1, j) > 0.5f) pcol = j;
    }
  if (frow < 0 || pcol < 0 || frow >= h_ - 1) return false;  // landed = done
  fruit_row_ = frow;
  fruit_col_ = fcol;
  paddle_col_ = pcol;
  done_ = false;
  in_progress_ = true;
  return true;
}

// ---------------------------------------------------------------------------
// DeepSea
// ---------------------------------------------------------------------------

DeepSeaEnv::DeepSeaEnv(int n, uint64_t seed) : n_(n) {
  (void)seed;  // no per-episode randomness; kept for the common signature
  if (n < 2) throw EnvError("deep_sea: N must be >= 2");
}

Observation DeepSeaEnv::reset() {
  row_ = 0;
  col_ = 0;
  done_ = false;
  return render();
}

StepResult DeepSeaEnv::step(int action) {
  if (done_) throw EnvError("deep_sea: step after done");
  if (action < 0 || action >= 2)
    throw EnvError("deep_sea: action " + std::to_string(action) +
                   " out of range [0,2)");
  StepResult r;
  const bool right = action == 1;
  if (right) r.reward -= static_cast<float>(move_cost());
  if (row_ == n_ - 1) {
    if (right && col_ == n_ - 1) r.reward += 1.0f;
    done_ = true;
    r.done = true;
    r.observation = blank(1, n_, n_);  // absorbing
    return r;
  }
  col_ += right ? 1 : -1;
  if (col_ < 0) col_ = 0;
  if (col_ >= n_) col_ = n_ - 1;
  row_ += 1;
  r.observation = render();
  return r;
}

Observation DeepSeaEnv::render() const {
  Observation o = blank(1, n_, n_);
  o.at(0, row_, col_) = 1.0f;
  return o;
}

bool DeepSeaEnv::restore(const Observation& obs) {
  if (obs.channels != 1 || obs.height != n_ || obs.width != n_) return false;
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < n_; ++j)
      if (obs.at(0, i, j) > 0.5f) {
        row_ = i;
        col_ = j;
        done_ = false;
        return true;
      }
  return false;  // all-zero plane is the absorbing terminal frame
}

// ---------------------------------------------------------------------------

std::unique_ptr<Env> make_env(const std::string& name, int size,
                              uint64_t seed) {
  if (name == "catcher") return std::make_unique<CatcherEnv>(size, size, seed);
  if (name == "deep_sea") return std::make_unique<DeepSeaEnv>(size, seed);
  throw EnvError("unknown environment '" + name +
                 "' (available: catcher, deep_sea, external:<command>)");
}

Observation stack_frames(const std::vector<Observation>& history, int frames) {
  if (history.empty()) throw EnvError("frame stack: empty history");
  if (frames < 1) throw EnvError("frame stack: F must be >= 1");
  const Observation& last = history.back();
  Observation out;
  out.channels = last.channels * frames;
  out.height = last.height;
  out.width = last.width;
  out.pixels.resize(static_cast<int64_t>(out.channels) * out.height *
                    out.width);
  const int64_t per = last.size();
  const int n = static_cast<int>(history.size());
  for (int f = 0; f < frames; ++f) {
    // oldest first; indices before the history start repeat the earliest
    int idx = n - frames + f;
    if (idx < 0) idx = 0;
    const Observation& src = history[idx];
    if (src.channels != last.channels || src.height != last.height ||
        src.width != last.width)
      throw EnvError("frame stack: inconsistent frame shapes");
    std::copy(src.pixels.begin(), src.pixels.end(),
              out.pixels.begin() + f * per);
  }
  return out;
}

Observation FrameStacker::stacked() const {
  return stack_frames(std::vector<Observation>(history.begin(), history.end()),
                      frames);
}

}  // namespace effzero
