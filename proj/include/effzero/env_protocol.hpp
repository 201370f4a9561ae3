#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "effzero/env.hpp"

namespace effzero {

// Base64 (RFC 4648, with padding) used for pixel payloads.
std::string base64_encode(const unsigned char* data, size_t n);
std::vector<unsigned char> base64_decode(const std::string& text);

// Newline-delimited JSON environment protocol over a child process's stdio.
// Requests:  {"cmd":"spec"} | {"cmd":"reset"} | {"cmd":"step","action":a} |
//            {"cmd":"close"}
// Replies:   spec  -> {"action_space":A,"shape":[c,h,w]}
//            reset -> {"pixels":base64-f32le,"shape":[c,h,w],
//                      "reward":0.0,"done":false}
//            step  -> same fields with the transition's reward/done
// The exact byte format is documented in docs/env_protocol.md.
class ExternalEnv : public Env {
 public:
  // command is the child process to spawn (split on spaces). frame_skip
  // repeats each action, summing rewards; reward_clip sign-clips rewards to
  // {-1, 0, 1} as they come back.
  ExternalEnv(const std::string& command, int frame_skip, bool reward_clip);
  ~ExternalEnv() override;

  int action_count() const override { return action_count_; }
  int channels() const override { return channels_; }
  int height() const override { return height_; }
  int width() const override { return width_; }
  Observation reset() override;
  StepResult step(int action) override;
  std::string name() const override { return "external"; }

 private:
  std::string request(const std::string& line);
  Observation parse_observation(const std::string& reply, float* reward,
                                bool* done);

  int action_count_ = 0;
  int channels_ = 0, height_ = 0, width_ = 0;
  int frame_skip_ = 1;
  bool reward_clip_ = true;
  bool done_ = true;
  int child_pid_ = -1;
  int to_child_ = -1;    // write end
  int from_child_ = -1;  // read end
  std::string read_buffer_;
};

// Serves a built-in environment over stdio using the same protocol; the
// other half of the pipe for tests and the env-serve tool.
void serve_env(Env& env, std::istream& in, std::ostream& out);

}  // namespace effzero
