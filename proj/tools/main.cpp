// effzero command-line entry points: train, eval, ablate, value-error, plot
// and env-serve. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "effzero/env_protocol.hpp"
#include "effzero/pipeline.hpp"

namespace fs = std::filesystem;
using namespace effzero;

namespace {

RunConfig make_config(const std::string& config_path,
                      const std::string& profile_name, const std::string& env,
                      int env_size, uint64_t seed, bool seed_set,
                      const std::string& mode,
                      const std::vector<std::string>& sets) {
  RunConfig cfg = load_config(config_path, profile_name);
  if (!env.empty()) cfg.env_name = env;
  if (env_size > 0) cfg.env_size = env_size;
  if (seed_set) cfg.seed = seed;
  if (!mode.empty()) cfg.run_mode = mode;
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_key_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (cfg.env_name.rfind("external:", 0) != 0 && cfg.env_name != "catcher" &&
      cfg.env_name != "deep_sea")
    throw ConfigError("unknown environment '" + cfg.env_name +
                      "' (available: catcher, deep_sea, external:<command>)");
  cfg.validate();
  return cfg;
}

int run_train(const RunConfig& cfg, const std::string& out_dir,
              const std::vector<double>& buffer_snapshots) {
  RunHooks hooks;
  hooks.buffer_snapshots = buffer_snapshots;
  RunArtifacts art = run_training(cfg, out_dir, hooks);
  nlohmann::ordered_json j;
  j["checkpoint"] = art.checkpoint_path;
  j["metrics"] = art.metrics_path;
  j["learner_steps"] = art.learner_steps;
  j["env_steps"] = art.env_steps;
  j["early_stopped"] = art.early_stopped;
  j["final_eval_mean"] = art.final_eval_mean;
  j["final_eval_median"] = art.final_eval_median;
  std::cout << j.dump(2) << std::endl;
  return 0;
}

// --- plot -------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> x, y;
};

std::string svg_panel(const std::vector<Series>& series, double width,
                      double height, double ox, double oy,
                      const std::string& title) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b"};
  std::ostringstream s;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const auto& sr : series)
    for (size_t i = 0; i < sr.x.size(); ++i) {
      if (!any) {
        xmin = xmax = sr.x[i];
        ymin = ymax = sr.y[i];
        any = true;
      }
      xmin = std::min(xmin, sr.x[i]);
      xmax = std::max(xmax, sr.x[i]);
      ymin = std::min(ymin, sr.y[i]);
      ymax = std::max(ymax, sr.y[i]);
    }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  auto px = [&](double x) { return ox + (x - xmin) / (xmax - xmin) * width; };
  auto py = [&](double y) {
    return oy + height - (y - ymin) / (ymax - ymin) * height;
  };
  s << "<rect x='" << ox << "' y='" << oy << "' width='" << width
    << "' height='" << height << "' fill='none' stroke='#333'/>\n";
  s << "<text x='" << ox + 4 << "' y='" << oy - 6 << "' font-size='13'>"
    << title << "</text>\n";
  s << "<text x='" << ox << "' y='" << oy + height + 14
    << "' font-size='10'>" << xmin << "</text>\n";
  s << "<text x='" << ox + width - 30 << "' y='" << oy + height + 14
    << "' font-size='10'>" << xmax << "</text>\n";
  s << "<text x='" << ox - 4 << "' y='" << oy + height
    << "' font-size='10' text-anchor='end'>" << ymin << "</text>\n";
  s << "<text x='" << ox - 4 << "' y='" << oy + 10
    << "' font-size='10' text-anchor='end'>" << ymax << "</text>\n";
  int ci = 0;
  for (const auto& sr : series) {
    const char* color = kColors[ci % 6];
    if (!sr.x.empty()) {
      s << "<polyline fill='none' stroke='" << color
        << "' stroke-width='1.2' points='";
      for (size_t i = 0; i < sr.x.size(); ++i)
        s << px(sr.x[i]) << "," << py(sr.y[i]) << " ";
      s << "'/>\n";
    }
    s << "<text x='" << ox + width + 8 << "' y='" << oy + 14 + 14 * ci
      << "' font-size='11' fill='" << color << "'>" << sr.label
      << "</text>\n";
    ++ci;
  }
  return s.str();
}

int run_plot(const std::vector<std::string>& metric_files,
             const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::vector<std::string> loss_keys = {
      "total", "value_prefix_ce", "policy_ce", "value_ce", "consistency"};
  std::vector<Series> returns, losses;
  int64_t malformed = 0, rows = 0;

  std::ofstream csv(out_dir + "/curves.csv");
  csv << "run,step,total,value_prefix_ce,policy_ce,value_ce,consistency,"
         "weight_decay_term,grad_norm,lr,beta,temperature,buffer_size,"
         "env_steps,eval_mean_return,eval_median_return\n";

  for (const auto& path : metric_files) {
    std::ifstream in(path);
    if (!in) {
      std::cerr << "plot: cannot open " << path << "\n";
      return 2;
    }
    const std::string run = fs::path(path).parent_path().filename().string();
    Series ret{run + " return", {}, {}};
    std::vector<Series> loss;
    for (const auto& k : loss_keys) loss.push_back({run + " " + k, {}, {}});
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        const double step = j.at("step").get<double>();
        csv << run << "," << static_cast<int64_t>(step);
        for (const auto& key :
             {"total", "value_prefix_ce", "policy_ce", "value_ce",
              "consistency", "weight_decay_term", "grad_norm", "lr", "beta",
              "temperature", "buffer_size", "env_steps"})
          csv << "," << (j.contains(key) ? j[key].dump() : "");
        csv << ","
            << (j.contains("eval_mean_return") ? j["eval_mean_return"].dump()
                                               : "");
        csv << ","
            << (j.contains("eval_median_return")
                    ? j["eval_median_return"].dump()
                    : "");
        csv << "\n";
        ++rows;
        if (j.contains("eval_mean_return")) {
          ret.x.push_back(step);
          ret.y.push_back(j["eval_mean_return"].get<double>());
        }
        if (j.contains("total")) {
          for (size_t k = 0; k < loss_keys.size(); ++k) {
            if (j.contains(loss_keys[k])) {
              loss[k].x.push_back(step);
              loss[k].y.push_back(j[loss_keys[k]].get<double>());
            }
          }
        }
      } catch (const std::exception&) {
        ++malformed;
        continue;
      }
    }
    returns.push_back(std::move(ret));
    for (auto& l : loss) losses.push_back(std::move(l));
  }

  std::ofstream svg(out_dir + "/curves.svg");
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='900' "
         "height='640'>\n";
  svg << svg_panel(returns, 560, 240, 60, 30, "evaluation return vs step");
  svg << svg_panel(losses, 560, 240, 60, 350, "loss components vs step");
  svg << "</svg>\n";

  std::cout << "rows " << rows << ", malformed skipped " << malformed << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent-model tree-search reinforcement learning engine"};
  app.require_subcommand(1);

  // shared options
  std::string config_path, profile_name = "toy", env, mode, out_dir;
  int env_size = 0;
  uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> sets;
  std::vector<double> buffer_snapshots;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--buffer-snapshots", buffer_snapshots,
                    "training-progress fractions at which to dump the "
                    "replay buffer (for the value-error diagnostic)")
        ->take_all();
    cmd->add_option("--config", config_path, "key=value configuration file");
    cmd->add_option("--profile", profile_name, "toy or full")
        ->check(CLI::IsMember({"toy", "full"}));
    cmd->add_option("--env", env, "catcher | deep_sea | external:<command>");
    cmd->add_option("--env-size", env_size, "grid side for built-in envs");
    cmd->add_option("--seed", seed, "run seed")
        ->each([&](const std::string&) { seed_set = true; });
    cmd->add_option("--mode", mode, "serial or parallel")
        ->check(CLI::IsMember({"serial", "parallel"}));
    cmd->add_option("--set", sets, "extra key=value overrides")
        ->take_all();
    cmd->add_option("--out", out_dir, "output directory")->required();
  };

  auto* train_cmd = app.add_subcommand("train", "run the training pipeline");
  add_common(train_cmd);

  auto* ablate_cmd =
      app.add_subcommand("ablate", "train with components disabled");
  add_common(ablate_cmd);
  std::vector<std::string> disable;
  ablate_cmd
      ->add_option("--disable", disable,
                   "consistency | value-prefix | off-policy-correction | "
                   "augmentation")
      ->required()
      ->take_all();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path;
  int episodes = 0;
  double ref_score = std::numeric_limits<double>::quiet_NaN();
  double random_score = std::numeric_limits<double>::quiet_NaN();
  std::string eval_env;
  uint64_t eval_seed = 1;
  eval_cmd->add_option("--checkpoint", ckpt_path)->required();
  eval_cmd->add_option("--episodes", episodes, "default: config value");
  eval_cmd->add_option("--seed", eval_seed);
  eval_cmd->add_option("--env", eval_env, "must match checkpoint metadata");
  eval_cmd->add_option("--reference", ref_score,
                       "reference score for normalization");
  eval_cmd->add_option("--random", random_score,
                       "random-play score for normalization");

  auto* verr_cmd = app.add_subcommand(
      "value-error", "target-value error versus Monte-Carlo ground truth");
  std::string buffer_path, verr_out;
  std::string verr_ckpt;
  int rollouts = 1000, max_states = 64;
  verr_cmd->add_option("--buffer", buffer_path, "buffer snapshot")->required();
  verr_cmd->add_option("--checkpoint", verr_ckpt)->required();
  verr_cmd->add_option("--rollouts", rollouts, "MC rollouts per state");
  verr_cmd->add_option("--max-states", max_states);
  verr_cmd->add_option("--out", verr_out, "report JSON path");

  auto* plot_cmd = app.add_subcommand("plot", "render metrics curves");
  std::vector<std::string> metric_files;
  std::string plot_out;
  plot_cmd->add_option("--metrics", metric_files, "metrics.jsonl files")
      ->required()
      ->take_all();
  plot_cmd->add_option("--out", plot_out, "output directory")->required();

  auto* serve_cmd = app.add_subcommand(
      "env-serve", "serve a built-in env over the stdio JSON protocol");
  std::string serve_env_name = "catcher";
  int serve_size = 5;
  uint64_t serve_seed = 0;
  serve_cmd->add_option("--env", serve_env_name);
  serve_cmd->add_option("--size", serve_size);
  serve_cmd->add_option("--seed", serve_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed() || ablate_cmd->parsed()) {
      RunConfig cfg = make_config(config_path, profile_name, env, env_size,
                                  seed, seed_set, mode, sets);
      for (const auto& d : disable) {
        if (d == "consistency") cfg.enable_consistency = false;
        else if (d == "value-prefix") cfg.enable_value_prefix = false;
        else if (d == "off-policy-correction")
          cfg.enable_off_policy_correction = false;
        else if (d == "augmentation") cfg.enable_data_augmentation = false;
        else {
          std::cerr << "unknown switch '" << d
                    << "' (expected consistency, value-prefix, "
                       "off-policy-correction or augmentation)\n";
          return 1;
        }
      }
      return run_train(cfg, out_dir, buffer_snapshots);
    }

    if (eval_cmd->parsed()) {
      RunConfig cfg;
      std::string ckpt_env;
      auto model = load_model_checkpoint(ckpt_path, &cfg, &ckpt_env);
      if (!eval_env.empty() && eval_env != ckpt_env) {
        std::cerr << "eval: checkpoint was trained on '" << ckpt_env
                  << "', not '" << eval_env << "'\n";
        return 1;
      }
      const int n = episodes > 0 ? episodes : cfg.eval_episodes;
      EvalResult ev = evaluate(*model, cfg, n, eval_seed);
      nlohmann::ordered_json j;
      j["episodes"] = n;
      j["mean_return"] = ev.mean_return;
      j["median_return"] = ev.median_return;
      j["returns"] = ev.returns;
      if (!std::isnan(ref_score) && !std::isnan(random_score))
        j["normalized_score"] =
            normalized_score(ev.mean_return, random_score, ref_score);
      std::cout << j.dump(2) << std::endl;
      return 0;
    }

    if (verr_cmd->parsed()) {
      RunConfig cfg;
      auto model = load_model_checkpoint(verr_ckpt, &cfg, nullptr);
      BufferSnapshot snap = read_buffer_snapshot(buffer_path);
      const auto meta = nlohmann::json::parse(snap.metadata);
      const int64_t t_current = meta.value("t_current", cfg.training_steps);
      Rng rng(cfg.seed + 77);
      auto with =
          measure_value_error(snap.segments, *model, cfg, true, t_current,
                              max_states, rollouts, rng);
      auto without =
          measure_value_error(snap.segments, *model, cfg, false, t_current,
                              max_states, rollouts, rng);
      nlohmann::ordered_json j;
      j["states"] = with.states;
      j["rollouts_per_state"] = rollouts;
      j["with_correction"] = {{"current_state", with.current_state},
                              {"unrolled_next", with.unrolled},
                              {"all_states", with.all_states}};
      j["without_correction"] = {{"current_state", without.current_state},
                                 {"unrolled_next", without.unrolled},
                                 {"all_states", without.all_states}};
      const std::string text = j.dump(2);
      if (!verr_out.empty()) {
        std::ofstream out(verr_out);
        out << text << "\n";
      }
      std::cout << text << std::endl;
      return 0;
    }

    if (plot_cmd->parsed()) return run_plot(metric_files, plot_out);

    if (serve_cmd->parsed()) {
      auto env_obj = make_env(serve_env_name, serve_size, serve_seed);
      serve_env(*env_obj, std::cin, std::cout);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
