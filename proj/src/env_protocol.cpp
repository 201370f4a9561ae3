#include "effzero/env_protocol.hpp"

#include <json.hpp>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace effzero {

// ---------------------------------------------------------------------------
// base64
// ---------------------------------------------------------------------------

namespace {
const char kB64[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(const unsigned char* data, size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (size_t i = 0; i < n; i += 3) {
    const unsigned b0 = data[i];
    const unsigned b1 = i + 1 < n ? data[i + 1] : 0;
    const unsigned b2 = i + 2 < n ? data[i + 2] : 0;
    out.push_back(kB64[b0 >> 2]);
    out.push_back(kB64[((b0 & 0x3) << 4) | (b1 >> 4)]);
    out.push_back(i + 1 < n ? kB64[((b1 & 0xf) << 2) | (b2 >> 6)] : '=');
    out.push_back(i + 2 < n ? kB64[b2 & 0x3f] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  int acc = 0, bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = b64_value(c);
    if (v < 0) throw EnvError("base64: invalid character");
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((acc >> bits) & 0xff));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// server
// ---------------------------------------------------------------------------

namespace {

nlohmann::json observation_reply(const Observation& obs, float reward,
                                 bool done) {
  nlohmann::json j;
  static_assert(sizeof(float) == 4);
  j["pixels"] = base64_encode(
      reinterpret_cast<const unsigned char*>(obs.pixels.data()),
      obs.pixels.size() * 4);
  j["shape"] = {obs.channels, obs.height, obs.width};
  j["reward"] = reward;
  j["done"] = done;
  return j;
}

}  // namespace

void serve_env(Env& env, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json reply;
    try {
      const auto req = nlohmann::json::parse(line);
      const std::string cmd = req.at("cmd").get<std::string>();
      if (cmd == "spec") {
        reply["action_space"] = env.action_count();
        reply["shape"] = {env.channels(), env.height(), env.width()};
      } else if (cmd == "reset") {
        reply = observation_reply(env.reset(), 0.0f, false);
      } else if (cmd == "step") {
        const int action = req.at("action").get<int>();
        const StepResult r = env.step(action);
        reply = observation_reply(r.observation, r.reward, r.done);
      } else if (cmd == "close") {
        break;
      } else {
        reply["error"] = "unknown command '" + cmd + "'";
      }
    } catch (const std::exception& e) {
      reply = nlohmann::json{{"error", e.what()}};
    }
    out << reply.dump() << "\n";
    out.flush();
  }
}

// ---------------------------------------------------------------------------
// client
// ---------------------------------------------------------------------------

ExternalEnv::ExternalEnv(const std::string& command, int frame_skip,
                         bool reward_clip)
    : frame_skip_(frame_skip), reward_clip_(reward_clip) {
  if (frame_skip < 1) throw EnvError("external env: frame_skip must be >= 1");
  std::vector<std::string> args;
  std::istringstream ss(command);
  std::string tok;
  while (ss >> tok) args.push_back(tok);
  if (args.empty()) throw EnvError("external env: empty command");

  int to_child[2], from_child[2];
  if (pipe(to_child) != 0 || pipe(from_child) != 0)
    throw EnvError("external env: pipe failed");
  const int pid = fork();
  if (pid < 0) throw EnvError("external env: fork failed");
  if (pid == 0) {
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    close(to_child[0]);
    close(to_child[1]);
    close(from_child[0]);
    close(from_child[1]);
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    execvp(argv[0], argv.data());
    _exit(127);
  }
  child_pid_ = pid;
  to_child_ = to_child[1];
  from_child_ = from_child[0];
  close(to_child[0]);
  close(from_child[1]);

  const auto spec = nlohmann::json::parse(request("{\"cmd\":\"spec\"}"));
  if (spec.contains("error"))
    throw EnvError("external env: " + spec["error"].get<std::string>());
  action_count_ = spec.at("action_space").get<int>();
  channels_ = spec.at("shape")[0].get<int>();
  height_ = spec.at("shape")[1].get<int>();
  width_ = spec.at("shape")[2].get<int>();
}

ExternalEnv::~ExternalEnv() {
  if (to_child_ >= 0) {
    const std::string bye = "{\"cmd\":\"close\"}\n";
    ssize_t ignored = write(to_child_, bye.data(), bye.size());
    (void)ignored;
    close(to_child_);
  }
  if (from_child_ >= 0) close(from_child_);
  if (child_pid_ > 0) {
    int status = 0;
    waitpid(child_pid_, &status, 0);
  }
}

std::string ExternalEnv::request(const std::string& line) {
  std::string msg = line + "\n";
  size_t off = 0;
  while (off < msg.size()) {
    const ssize_t n = write(to_child_, msg.data() + off, msg.size() - off);
    if (n <= 0) throw EnvError("external env: child pipe closed on write");
    off += static_cast<size_t>(n);
  }
  for (;;) {
    const auto nl = read_buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string reply = read_buffer_.substr(0, nl);
      read_buffer_.erase(0, nl + 1);
      return reply;
    }
    char buf[4096];
    const ssize_t n = read(from_child_, buf, sizeof(buf));
    if (n <= 0) throw EnvError("external env: child pipe closed on read");
    read_buffer_.append(buf, static_cast<size_t>(n));
  }
}

Observation ExternalEnv::parse_observation(const std::string& reply,
                                           float* reward, bool* done) {
  const auto j = nlohmann::json::parse(reply);
  if (j.contains("error"))
    throw EnvError("external env: " + j["error"].get<std::string>());
  Observation obs;
  obs.channels = j.at("shape")[0].get<int>();
  obs.height = j.at("shape")[1].get<int>();
  obs.width = j.at("shape")[2].get<int>();
  const auto raw = base64_decode(j.at("pixels").get<std::string>());
  if (raw.size() != static_cast<size_t>(obs.size()) * 4)
    throw EnvError("external env: pixel payload size mismatch");
  obs.pixels.resize(obs.size());
  std::memcpy(obs.pixels.data(), raw.data(), raw.size());
  if (reward) *reward = j.at("reward").get<float>();
  if (done) *done = j.at("done").get<bool>();
  return obs;
}

Observation ExternalEnv::reset() {
  done_ = false;
  return parse_observation(request("{\"cmd\":\"reset\"}"), nullptr, nullptr);
}

StepResult ExternalEnv::step(int action) {
  if (done_) throw EnvError("external env: step after done");
  if (action < 0 || action >= action_count_)
    throw EnvError("external env: action out of range");
  StepResult out;
  float total = 0.0f;
  for (int rep = 0; rep < frame_skip_ && !out.done; ++rep) {
    nlohmann::json req;
    req["cmd"] = "step";
    req["action"] = action;
    float r = 0.0f;
    bool d = false;
    out.observation = parse_observation(request(req.dump()), &r, &d);
    total += r;
    out.done = d;
  }
  out.reward = reward_clip_
                   ? (total > 0 ? 1.0f : (total < 0 ? -1.0f : 0.0f))
                   : total;
  done_ = out.done;
  return out;
}

}  // namespace effzero
