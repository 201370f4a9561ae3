#include "effzero/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <thread>

namespace effzero {

namespace {

constexpr uint64_t kStreamActor = 0xac7001;
constexpr uint64_t kStreamReanalyze = 0x5ea7;
constexpr uint64_t kStreamTrain = 0x7121;
constexpr uint64_t kStreamEval = 0xe7a1;

float clip_reward(float r, bool enabled) {
  if (!enabled) return r;
  return r > 0 ? 1.0f : (r < 0 ? -1.0f : 0.0f);
}

}  // namespace

std::unique_ptr<Env> build_env(const RunConfig& cfg, uint64_t seed) {
  if (cfg.env_name.rfind("external:", 0) == 0)
    return std::make_unique<ExternalEnv>(cfg.env_name.substr(9),
                                         cfg.frame_skip,
                                         cfg.reward_clip_enabled());
  return make_env(cfg.env_name, cfg.env_size, seed);
}

// ---------------------------------------------------------------------------
// SelfPlayActor
// ---------------------------------------------------------------------------

SelfPlayActor::SelfPlayActor(const RunConfig& cfg, ReplayBuffer& replay,
                             uint64_t actor_id)
    : cfg_(cfg),
      replay_(replay),
      env_(build_env(cfg, Rng::derive(cfg.seed, actor_id).next_u64())),
      search_(SearchConfig::from_run(cfg)),
      rng_(Rng::derive(cfg.seed, kStreamActor + actor_id)),
      stacker_(cfg.frames_stacked) {}

void SelfPlayActor::start_segment(bool fresh_episode) {
  segment_ = GameSegment{};
  if (!fresh_episode) {
    // carry the stacking context across the boundary
    const auto& h = stacker_.history;
    for (size_t i = 0; i + 1 < h.size(); ++i)
      segment_.prior_frames.push_back(h[i]);
  }
  segment_.obs.push_back(stacker_.history.back());
}

void SelfPlayActor::flush_segment(bool terminal) {
  segment_.terminal = terminal;
  if (segment_.length() > 0) replay_.append(std::move(segment_));
  segment_ = GameSegment{};
}

void SelfPlayActor::step_once(const ModelSet& snapshot, int64_t learner_step) {
  if (!episode_active_) {
    Observation first = env_->reset();
    stacker_.reset(first);
    episode_active_ = true;
    episode_return_ = 0.0;
    start_segment(/*fresh_episode=*/true);
  }

  const Observation stacked = stacker_.stacked();
  NetworkSearchModel sm(snapshot);
  auto results = run_batch(sm, stacked.pixels.data(), 1, stacked.size(),
                           NoiseMode::kTrain, search_, rng_);
  const SearchResult& res = results[0];
  const double temp = cfg_.temperature(learner_step);
  const int action = sample_visits(res, temp, rng_);

  StepResult sr = env_->step(action);
  const float reward = clip_reward(sr.reward, cfg_.reward_clip_enabled());
  episode_return_ += sr.reward;
  ++env_steps_;

  segment_.actions.push_back(action);
  segment_.rewards.push_back(reward);
  std::vector<float> pol(res.policy.size());
  for (size_t a = 0; a < pol.size(); ++a)
    pol[a] = static_cast<float>(res.policy[a]);
  segment_.policies.push_back(std::move(pol));
  segment_.root_values.push_back(static_cast<float>(res.value));
  segment_.collect_steps.push_back(learner_step);
  segment_.obs.push_back(sr.observation);
  stacker_.push(sr.observation);

  if (sr.done) {
    last_return_ = episode_return_;
    flush_segment(/*terminal=*/true);
    episode_active_ = false;
  } else if (segment_.length() >= cfg_.segment_length) {
    flush_segment(/*terminal=*/false);
    start_segment(/*fresh_episode=*/false);
  }
}

void SelfPlayActor::flush_pending() {
  if (!episode_active_ || segment_.length() == 0) return;
  flush_segment(/*terminal=*/false);
  start_segment(/*fresh_episode=*/false);
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

EvalResult evaluate(const ModelSet& model, const RunConfig& cfg, int episodes,
                    uint64_t eval_seed) {
  auto env = build_env(cfg, eval_seed);
  SearchConfig sc = SearchConfig::from_run(cfg);
  NetworkSearchModel sm(model);
  Rng rng = Rng::derive(eval_seed, kStreamEval);

  EvalResult out;
  out.returns.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    FrameStacker stacker(cfg.frames_stacked);
    stacker.reset(env->reset());
    double ret = 0.0;
    for (int step = 0; step < 100000; ++step) {
      const Observation stacked = stacker.stacked();
      auto results = run_batch(sm, stacked.pixels.data(), 1, stacked.size(),
                               NoiseMode::kEval, sc, rng);
      const int action = argmax_visits(results[0]);
      StepResult sr = env->step(action);
      ret += sr.reward;
      if (sr.done) break;
      stacker.push(sr.observation);
    }
    out.returns.push_back(ret);
  }
  std::vector<double> sorted = out.returns;
  std::sort(sorted.begin(), sorted.end());
  for (double r : sorted) out.mean_return += r;
  out.mean_return /= std::max<size_t>(1, sorted.size());
  out.median_return = sorted.empty()
                          ? 0.0
                          : (sorted.size() % 2
                                 ? sorted[sorted.size() / 2]
                                 : 0.5 * (sorted[sorted.size() / 2 - 1] +
                                          sorted[sorted.size() / 2]));
  return out;
}

double normalized_score(double x, double random_score,
                        double reference_score) {
  return (x - random_score) / (reference_score - random_score);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

std::string model_metadata_json(const RunConfig& cfg, int64_t step) {
  nlohmann::ordered_json j;
  j["env_name"] = cfg.env_name;
  j["env_size"] = cfg.env_size;
  j["step"] = step;
  j["config_hash"] = config_hash(cfg);
  j["config"] = save_config(cfg);
  return j.dump();
}

void save_model_checkpoint(const std::string& path, const ModelSet& model,
                           const RunConfig& cfg, int64_t step) {
  auto meta = nlohmann::ordered_json::parse(model_metadata_json(cfg, step));
  const ModelConfig& mc = model.config();
  meta["obs_shape"] = {mc.obs_channels, mc.obs_height, mc.obs_width};
  meta["action_count"] = mc.action_count;
  write_checkpoint(path, meta.dump(), model.state_arrays());
}

std::shared_ptr<ModelSet> load_model_checkpoint(const std::string& path,
                                                RunConfig* cfg_out,
                                                std::string* env_name) {
  Checkpoint ck = read_checkpoint(path);
  const auto meta = nlohmann::json::parse(ck.metadata);
  RunConfig cfg;
  {
    std::istringstream ss(meta.at("config").get<std::string>());
    std::string line;
    while (std::getline(ss, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t");
        const auto b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string()
                                      : s.substr(a, b - a + 1);
      };
      apply_key_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  auto env = build_env(cfg, 0);
  ModelConfig mc = ModelConfig::from_run(cfg, env->channels(), env->height(),
                                         env->width(), env->action_count());
  auto model = std::make_shared<ModelSet>(mc, cfg.seed);
  model->load_state_arrays(ck.params);
  model->set_train(false);
  if (cfg_out) *cfg_out = cfg;
  if (env_name) *env_name = meta.at("env_name").get<std::string>();
  return model;
}

// ---------------------------------------------------------------------------
// run_training
// ---------------------------------------------------------------------------

namespace {

struct SnapshotSlot {
  std::mutex mu;
  std::shared_ptr<const ModelSet> model;

  void publish(std::shared_ptr<const ModelSet> m) {
    std::lock_guard<std::mutex> lock(mu);
    model = std::move(m);
  }
  std::shared_ptr<const ModelSet> get() {
    std::lock_guard<std::mutex> lock(mu);
    return model;
  }
};

struct Shared {
  std::atomic<int64_t> learner_step{0};
  std::atomic<int64_t> env_steps{0};
  std::atomic<bool> stop{false};
  std::mutex err_mu;
  std::exception_ptr error;
  std::string error_context;

  void fail(const std::string& who) {
    std::lock_guard<std::mutex> lock(err_mu);
    if (!error) {
      error = std::current_exception();
      error_context = who;
    }
    stop.store(true);
  }
};

int64_t env_target(const RunConfig& cfg, int64_t learner_step) {
  const int64_t warmup =
      std::min<int64_t>(cfg.min_replay_size, cfg.env_steps_budget);
  const int64_t rest = cfg.env_steps_budget - warmup;
  const int64_t due =
      warmup + (rest * std::min(learner_step, cfg.training_steps)) /
                   cfg.training_steps;
  return std::min(due, cfg.env_steps_budget);
}

}  // namespace

RunArtifacts run_training(const RunConfig& cfg, const std::string& out_dir,
                          const RunHooks& hooks) {
  cfg.validate();
  if (cfg.min_replay_size > cfg.env_steps_budget)
    throw ConfigError(
        "config: env_steps_budget is below min_replay_size; nothing to train "
        "on");
  std::filesystem::create_directories(out_dir);
  save_config_file(cfg, out_dir + "/config.txt");

  auto probe_env = build_env(cfg, 0);
  const ModelConfig mc =
      ModelConfig::from_run(cfg, probe_env->channels(), probe_env->height(),
                            probe_env->width(), probe_env->action_count());
  probe_env.reset();

  ModelSet model(mc, cfg.seed);
  model.set_train(true);
  ReplayBuffer replay(cfg.replay_capacity(), cfg.priority_alpha);
  MetricsWriter metrics(out_dir + "/metrics.jsonl");

  SnapshotSlot selfplay_slot, target_slot;
  selfplay_slot.publish(model.clone());
  target_slot.publish(model.clone());

  Rng rng_reanalyze = Rng::derive(cfg.seed, kStreamReanalyze);
  Rng rng_train = Rng::derive(cfg.seed, kStreamTrain);

  RunArtifacts art;
  art.metrics_path = out_dir + "/metrics.jsonl";
  art.checkpoint_path = out_dir + "/checkpoint_final.ckpt";

  Shared shared;
  std::vector<double> snapshot_points = hooks.buffer_snapshots;
  std::sort(snapshot_points.begin(), snapshot_points.end());
  size_t next_snapshot = 0;

  const bool early_stop_enabled = !std::isnan(cfg.early_stop_return);

  auto maybe_eval = [&](int64_t step) -> bool {
    if (cfg.eval_interval <= 0 || step % cfg.eval_interval != 0 || step == 0)
      return false;
    auto snap = model.clone();
    EvalResult ev = evaluate(*snap, cfg, cfg.eval_episodes,
                             Rng::derive(cfg.seed, 0xe0a1 + step).next_u64());
    MetricsRow row;
    row.step = step;
    row.eval_episodes = cfg.eval_episodes;
    row.eval_mean_return = ev.mean_return;
    row.eval_median_return = ev.median_return;
    row.buffer_size = replay.transition_count();
    row.env_steps = shared.env_steps.load();
    row.beta = cfg.priority_beta(step);
    row.temperature = cfg.temperature(step);
    metrics.write(row);
    if (hooks.on_eval) hooks.on_eval(step, ev);
    art.final_eval_mean = ev.mean_return;
    art.final_eval_median = ev.median_return;
    return early_stop_enabled && ev.mean_return >= cfg.early_stop_return;
  };

  auto maybe_buffer_snapshot = [&](int64_t step) {
    while (next_snapshot < snapshot_points.size() &&
           step >= static_cast<int64_t>(snapshot_points[next_snapshot] *
                                        static_cast<double>(
                                            cfg.training_steps))) {
      const int pct =
          static_cast<int>(std::lround(snapshot_points[next_snapshot] * 100));
      nlohmann::ordered_json meta;
      meta["t_current"] = step;
      meta["env_steps"] = shared.env_steps.load();
      meta["config"] = save_config(cfg);
      write_buffer_snapshot(
          out_dir + "/buffer_" + std::to_string(pct) + ".bin", replay,
          meta.dump());
      ++next_snapshot;
    }
  };

  const auto run_start = std::chrono::steady_clock::now();
  auto train_one = [&](TrainBatch& batch, int64_t step) {
    TrainStepResult res = train_step(batch, model, cfg, step, rng_train);
    replay.update_priorities(batch.indices, res.value_l1);
    const int64_t next = step + 1;
    if (next % 250 == 0 || next == cfg.training_steps) {
      const double secs = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - run_start)
                              .count();
      std::fprintf(stderr,
                   "[effzero] step %lld/%lld  env %lld  buffer %lld  loss "
                   "%.3f  %.1f steps/s\n",
                   static_cast<long long>(next),
                   static_cast<long long>(cfg.training_steps),
                   static_cast<long long>(shared.env_steps.load()),
                   static_cast<long long>(replay.transition_count()),
                   res.report.total, next / std::max(secs, 1e-9));
    }
    if (next % cfg.selfplay_model_interval == 0)
      selfplay_slot.publish(model.clone());
    if (next % cfg.target_model_interval == 0)
      target_slot.publish(model.clone());
    MetricsRow row;
    row.step = step;
    row.losses = res.report;
    row.beta = cfg.priority_beta(step);
    row.temperature = cfg.temperature(step);
    row.buffer_size = replay.transition_count();
    row.env_steps = shared.env_steps.load();
    metrics.write(row);
    if (cfg.checkpoint_interval > 0 && next % cfg.checkpoint_interval == 0)
      save_model_checkpoint(
          out_dir + "/checkpoint_" + std::to_string(next) + ".ckpt", model,
          cfg, next);
  };

  if (cfg.run_mode == "serial") {
    SelfPlayActor actor(cfg, replay, /*actor_id=*/0);
    int64_t step = 0;
    for (; step < cfg.training_steps; ++step) {
      const int64_t due = env_target(cfg, step + 1);
      auto snap = selfplay_slot.get();
      while (actor.env_steps() < due) {
        actor.step_once(*snap, step);
        shared.env_steps.store(actor.env_steps());
      }
      // episode lengths rarely divide the warmup exactly; keep collecting
      // (or flush the open segment at the budget edge) until the buffer
      // can serve a batch
      while (replay.transition_count() < cfg.min_replay_size) {
        if (actor.env_steps() >= cfg.env_steps_budget) {
          actor.flush_pending();
          break;
        }
        actor.step_once(*snap, step);
        shared.env_steps.store(actor.env_steps());
      }
      BatchContext ctx = make_batch_context(replay, cfg, step, rng_reanalyze);
      auto target = target_slot.get();
      TrainBatch batch = build_train_batch(ctx, *target, cfg, rng_reanalyze);
      train_one(batch, step);
      maybe_buffer_snapshot(step + 1);
      if (maybe_eval(step + 1)) {
        art.early_stopped = true;
        ++step;
        break;
      }
    }
    art.learner_steps = step;
    art.env_steps = actor.env_steps();
  } else {
    // parallel topology: actors, context workers, batch workers, learner
    BoundedQueue<BatchContext> context_queue(cfg.queue_capacity);
    BoundedQueue<TrainBatch> batch_queue(cfg.queue_capacity);
    std::vector<std::thread> threads;

    for (int a = 0; a < cfg.actors; ++a) {
      threads.emplace_back([&, a] {
        try {
          SelfPlayActor actor(cfg, replay, static_cast<uint64_t>(a));
          bool flushed_at_budget = false;
          while (!shared.stop.load()) {
            const bool warming =
                replay.transition_count() < cfg.min_replay_size;
            const int64_t due = env_target(
                cfg, std::min<int64_t>(shared.learner_step.load() + 1,
                                       cfg.training_steps));
            // Per-actor share of the due budget; remainder goes to actor 0.
            const int64_t share =
                due / cfg.actors + (a == 0 ? due % cfg.actors : 0);
            const bool budget_left =
                actor.env_steps() < cfg.env_steps_budget / cfg.actors +
                                        (a == 0 ? 1 : 0) * (cfg.env_steps_budget %
                                                            cfg.actors);
            if (!budget_left) {
              if (!flushed_at_budget) {
                actor.flush_pending();
                flushed_at_budget = true;
              }
              std::this_thread::sleep_for(std::chrono::milliseconds(2));
              continue;
            }
            if (actor.env_steps() >= share && !warming) {
              std::this_thread::sleep_for(std::chrono::milliseconds(1));
              continue;
            }
            auto snap = selfplay_slot.get();
            actor.step_once(*snap, shared.learner_step.load());
            shared.env_steps.fetch_add(1);
          }
        } catch (...) {
          shared.fail("self-play actor");
        }
      });
    }
    for (int w = 0; w < cfg.context_workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          Rng rng = Rng::derive(cfg.seed, kStreamReanalyze + 100 + w);
          while (!shared.stop.load()) {
            if (replay.transition_count() < cfg.min_replay_size) {
              std::this_thread::sleep_for(std::chrono::milliseconds(1));
              continue;
            }
            BatchContext ctx = make_batch_context(
                replay, cfg, shared.learner_step.load(), rng);
            if (!context_queue.push(std::move(ctx))) break;
          }
        } catch (...) {
          shared.fail("context worker");
        }
      });
    }
    for (int w = 0; w < cfg.batch_workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          Rng rng = Rng::derive(cfg.seed, kStreamReanalyze + 200 + w);
          while (!shared.stop.load()) {
            auto ctx = context_queue.pop();
            if (!ctx) break;
            auto target = target_slot.get();
            TrainBatch batch = build_train_batch(*ctx, *target, cfg, rng);
            if (!batch_queue.push(std::move(batch))) break;
          }
        } catch (...) {
          shared.fail("batch worker");
        }
      });
    }

    int64_t step = 0;
    try {
      for (; step < cfg.training_steps && !shared.stop.load(); ++step) {
        auto batch = batch_queue.pop();
        if (!batch) break;
        train_one(*batch, step);
        shared.learner_step.store(step + 1);
        maybe_buffer_snapshot(step + 1);
        if (maybe_eval(step + 1)) {
          art.early_stopped = true;
          ++step;
          break;
        }
      }
    } catch (...) {
      shared.fail("learner");
    }
    shared.stop.store(true);
    context_queue.close();
    batch_queue.close();
    for (auto& t : threads) t.join();
    art.learner_steps = step;
    art.env_steps = shared.env_steps.load();
    if (shared.error) {
      // keep a partial checkpoint before surfacing the failure
      save_model_checkpoint(out_dir + "/checkpoint_partial.ckpt", model, cfg,
                            step);
      try {
        std::rethrow_exception(shared.error);
      } catch (const std::exception& e) {
        throw std::runtime_error("pipeline: " + shared.error_context +
                                 " failed: " + e.what());
      }
    }
  }

  // Final evaluation and checkpoint.
  {
    auto snap = model.clone();
    EvalResult ev = evaluate(*snap, cfg, cfg.eval_episodes,
                             Rng::derive(cfg.seed, 0xf19a1).next_u64());
    art.final_eval_mean = ev.mean_return;
    art.final_eval_median = ev.median_return;
    MetricsRow row;
    row.step = art.learner_steps;
    row.eval_episodes = cfg.eval_episodes;
    row.eval_mean_return = ev.mean_return;
    row.eval_median_return = ev.median_return;
    row.buffer_size = replay.transition_count();
    row.env_steps = art.env_steps;
    row.beta = cfg.priority_beta(art.learner_steps);
    row.temperature = cfg.temperature(art.learner_steps);
    metrics.write(row);
    if (hooks.on_eval) hooks.on_eval(art.learner_steps, ev);
  }
  save_model_checkpoint(art.checkpoint_path, model, cfg, art.learner_steps);
  metrics.flush();
  return art;
}

}  // namespace effzero
