#include "effzero/mcts.hpp"

#include <json.hpp>

#include <cmath>

namespace effzero {

// ---------------------------------------------------------------------------
// NetworkSearchModel
// ---------------------------------------------------------------------------

void NetworkSearchModel::initial_inference(const float* obs, int rows,
                                           int64_t obs_size,
                                           ModelBatchEval* out) const {
  NoGradGuard ng;
  auto x = Tensor<float>::from_data(
      {rows, static_cast<int>(obs_size)},
      std::vector<float>(obs, obs + rows * obs_size));
  auto latent = model_.represent(x);
  auto value_logits = model_.predict_value(latent);
  auto policy = softmax_rows(model_.predict_policy(latent));

  const int L = latent_dim();
  out->rows = rows;
  out->latent = latent.data();
  out->value.resize(rows);
  out->priors = policy.data();
  out->prefix.assign(rows, 0.0f);
  const int H = vp_dim();
  out->vp_h.assign(static_cast<int64_t>(rows) * H, 0.0f);
  out->vp_c.assign(static_cast<int64_t>(rows) * H, 0.0f);
  out->vp_steps.assign(rows, 0);
  out->vp_reset.assign(rows, 0);
  const auto& codec = model_.codec();
  for (int i = 0; i < rows; ++i)
    out->value[i] = static_cast<float>(codec.decode_logits(
        value_logits.data().data() +
        static_cast<int64_t>(i) * codec.bins()));
  (void)L;
}

void NetworkSearchModel::recurrent_inference(const float* latents,
                                             const int* actions,
                                             const float* vp_h,
                                             const float* vp_c,
                                             const int* steps, int rows,
                                             ModelBatchEval* out) const {
  NoGradGuard ng;
  const int L = latent_dim();
  auto state = Tensor<float>::from_data(
      {rows, L}, std::vector<float>(latents, latents + rows * L));
  auto onehot =
      model_.action_onehot(std::vector<int>(actions, actions + rows));
  auto next = model_.dynamics(state, onehot);

  auto value_logits = model_.predict_value(next);
  auto policy = softmax_rows(model_.predict_policy(next));
  const auto& codec = model_.codec();

  out->rows = rows;
  out->latent = next.data();
  out->value.resize(rows);
  out->priors = policy.data();
  for (int i = 0; i < rows; ++i)
    out->value[i] = static_cast<float>(codec.decode_logits(
        value_logits.data().data() +
        static_cast<int64_t>(i) * codec.bins()));

  if (per_step_reward()) {
    auto reward_logits = model_.predict_reward(next);
    out->prefix.resize(rows);
    for (int i = 0; i < rows; ++i)
      out->prefix[i] = static_cast<float>(codec.decode_logits(
          reward_logits.data().data() +
          static_cast<int64_t>(i) * codec.bins()));
    out->vp_h.clear();
    out->vp_c.clear();
    out->vp_steps.assign(rows, 0);
    out->vp_reset.assign(rows, 0);
    return;
  }

  const int H = vp_dim();
  // Rows may sit at different window offsets, so the LSTM runs on the whole
  // batch and the reset is applied per row afterwards. steps_since_reset on
  // the temporary state is irrelevant here; the per-row counters rule.
  VpStateT<float> vp;
  vp.h = Tensor<float>::from_data(
      {rows, H}, std::vector<float>(vp_h, vp_h + static_cast<int64_t>(rows) * H));
  vp.c = Tensor<float>::from_data(
      {rows, H}, std::vector<float>(vp_c, vp_c + static_cast<int64_t>(rows) * H));
  vp.steps_since_reset = 0;
  auto pre = model_.predict_value_prefix(next, vp);

  out->prefix.resize(rows);
  for (int i = 0; i < rows; ++i)
    out->prefix[i] = static_cast<float>(codec.decode_logits(
        pre.logits.data().data() +
        static_cast<int64_t>(i) * codec.bins()));

  out->vp_h = pre.state.h.data();
  out->vp_c = pre.state.c.data();
  out->vp_steps.resize(rows);
  out->vp_reset.resize(rows);
  const int zeta = model_.config().lstm_reset_horizon;
  for (int i = 0; i < rows; ++i) {
    const int next_steps = steps[i] + 1;
    if (next_steps >= zeta) {
      std::fill(out->vp_h.begin() + static_cast<int64_t>(i) * H,
                out->vp_h.begin() + static_cast<int64_t>(i + 1) * H, 0.0f);
      std::fill(out->vp_c.begin() + static_cast<int64_t>(i) * H,
                out->vp_c.begin() + static_cast<int64_t>(i + 1) * H, 0.0f);
      out->vp_steps[i] = 0;
      out->vp_reset[i] = 1;
    } else {
      out->vp_steps[i] = next_steps;
      out->vp_reset[i] = 0;
    }
  }
}

// ---------------------------------------------------------------------------
// Tree arena
// ---------------------------------------------------------------------------

namespace {

struct Node {
  float prior = 0.0f;
  int visits = 0;
  double value_sum = 0.0;
  float value_prefix = 0.0f;  // running-sum prediction (or per-step reward)
  bool is_reset = false;
  int first_child = -1;  // children occupy [first_child, first_child + A)
  int latent_row = -1;
  int vp_row = -1;
  int vp_steps = 0;

  bool expanded() const { return first_child >= 0; }
  double value() const { return visits > 0 ? value_sum / visits : 0.0; }
};

struct Tree {
  std::vector<Node> nodes;
  std::vector<float> latents;  // latent_dim per expanded node
  std::vector<float> vp_h, vp_c;
  MinMaxStats minmax{0.01};
  std::vector<int> path;  // node ids root..leaf of the current simulation
  int pending_action = -1;
};

double edge_reward(const Tree& t, int parent, int child, bool per_step) {
  const Node& c = t.nodes[child];
  if (per_step) return c.value_prefix;
  const Node& p = t.nodes[parent];
  return c.value_prefix - (p.is_reset ? 0.0 : p.value_prefix);
}

}  // namespace

// ---------------------------------------------------------------------------
// run_batch
// ---------------------------------------------------------------------------

std::vector<SearchResult> run_batch(const SearchModel& model,
                                    const float* root_obs, int n_roots,
                                    int64_t obs_size, NoiseMode mode,
                                    const SearchConfig& cfg, Rng& rng,
                                    std::string* tree_dump) {
  const int A = model.action_count();
  const int L = model.latent_dim();
  const int H = model.vp_dim();
  const bool per_step = model.per_step_reward();
  const double gamma = cfg.discount;

  ModelBatchEval root_eval;
  model.initial_inference(root_obs, n_roots, obs_size, &root_eval);
  for (float v : root_eval.value)
    if (!std::isfinite(v))
      throw TensorError("mcts: non-finite root value from model");

  std::vector<Tree> trees(n_roots);
  for (int r = 0; r < n_roots; ++r) {
    Tree& t = trees[r];
    t.minmax = MinMaxStats(cfg.softminmax_eps);
    t.nodes.reserve(static_cast<size_t>(cfg.num_simulations + 1) * (A + 1));
    t.nodes.emplace_back();
    Node& root = t.nodes[0];
    root.visits = 1;
    root.value_prefix = 0.0f;
    root.latent_row = 0;
    t.latents.assign(root_eval.latent.begin() + static_cast<int64_t>(r) * L,
                     root_eval.latent.begin() + static_cast<int64_t>(r + 1) * L);
    if (H > 0) {
      t.vp_h.assign(H, 0.0f);
      t.vp_c.assign(H, 0.0f);
      root.vp_row = 0;
    }
    root.vp_steps = 0;

    std::vector<double> priors(A);
    for (int a = 0; a < A; ++a)
      priors[a] = root_eval.priors[static_cast<int64_t>(r) * A + a];
    if (mode != NoiseMode::kEval && cfg.dirichlet_frac > 0.0) {
      const auto noise = rng.dirichlet(cfg.dirichlet_alpha, A);
      priors = dirichlet_mix(priors, noise, cfg.dirichlet_frac);
    }
    root.first_child = 1;
    for (int a = 0; a < A; ++a) {
      Node child;
      child.prior = static_cast<float>(priors[a]);
      t.nodes.push_back(child);
    }
  }

  std::vector<float> batch_latents(static_cast<int64_t>(n_roots) * L);
  std::vector<int> batch_actions(n_roots);
  std::vector<float> batch_h(static_cast<int64_t>(n_roots) * H);
  std::vector<float> batch_c(static_cast<int64_t>(n_roots) * H);
  std::vector<int> batch_steps(n_roots);
  ModelBatchEval eval;

  for (int sim = 0; sim < cfg.num_simulations; ++sim) {
    // Selection: walk every tree to an unexpanded child.
    for (int r = 0; r < n_roots; ++r) {
      Tree& t = trees[r];
      t.path.clear();
      int node_id = 0;
      double q_hat = 0.0;  // parent chain term; zero above the root
      t.path.push_back(0);
      for (;;) {
        double next_q_hat = 0.0;
        std::vector<ChildStats> stats(A);
        const Node& node = t.nodes[node_id];
        for (int a = 0; a < A; ++a) {
          const Node& c = t.nodes[node.first_child + a];
          stats[a].prior = c.prior;
          stats[a].visits = c.visits;
          if (c.visits > 0)
            stats[a].q_raw =
                edge_reward(t, node_id, node.first_child + a, per_step) +
                gamma * c.value();
        }
        const int action = uct_select(stats, q_hat, t.minmax, cfg.uct_c1,
                                      cfg.uct_c2, &next_q_hat);
        q_hat = next_q_hat;
        const int child_id = t.nodes[node_id].first_child + action;
        t.path.push_back(child_id);
        if (!t.nodes[child_id].expanded()) {
          t.pending_action = action;
          break;
        }
        node_id = child_id;
      }

      const int parent_id = t.path[t.path.size() - 2];
      const Node& parent = t.nodes[parent_id];
      std::copy_n(t.latents.begin() +
                      static_cast<int64_t>(parent.latent_row) * L,
                  L, batch_latents.begin() + static_cast<int64_t>(r) * L);
      batch_actions[r] = t.pending_action;
      if (H > 0) {
        std::copy_n(t.vp_h.begin() + static_cast<int64_t>(parent.vp_row) * H,
                    H, batch_h.begin() + static_cast<int64_t>(r) * H);
        std::copy_n(t.vp_c.begin() + static_cast<int64_t>(parent.vp_row) * H,
                    H, batch_c.begin() + static_cast<int64_t>(r) * H);
      }
      batch_steps[r] = parent.vp_steps;
    }

    model.recurrent_inference(batch_latents.data(), batch_actions.data(),
                              batch_h.data(), batch_c.data(),
                              batch_steps.data(), n_roots, &eval);

    // Expansion and backup.
    for (int r = 0; r < n_roots; ++r) {
      Tree& t = trees[r];
      const int leaf_id = t.path.back();
      Node& leaf = t.nodes[leaf_id];
      const float leaf_value = eval.value[r];
      const float leaf_prefix = eval.prefix[r];
      if (!std::isfinite(leaf_value) || !std::isfinite(leaf_prefix))
        throw TensorError("mcts: non-finite model output during search");

      leaf.value_prefix = leaf_prefix;
      leaf.latent_row = static_cast<int>(t.latents.size()) / L;
      t.latents.insert(t.latents.end(),
                       eval.latent.begin() + static_cast<int64_t>(r) * L,
                       eval.latent.begin() + static_cast<int64_t>(r + 1) * L);
      if (H > 0) {
        leaf.vp_row = static_cast<int>(t.vp_h.size()) / H;
        t.vp_h.insert(t.vp_h.end(),
                      eval.vp_h.begin() + static_cast<int64_t>(r) * H,
                      eval.vp_h.begin() + static_cast<int64_t>(r + 1) * H);
        t.vp_c.insert(t.vp_c.end(),
                      eval.vp_c.begin() + static_cast<int64_t>(r) * H,
                      eval.vp_c.begin() + static_cast<int64_t>(r + 1) * H);
        leaf.vp_steps = eval.vp_steps[r];
        leaf.is_reset = eval.vp_reset[r] != 0;
      }

      const int first = static_cast<int>(t.nodes.size());
      for (int a = 0; a < A; ++a) {
        Node child;
        child.prior = eval.priors[static_cast<int64_t>(r) * A + a];
        t.nodes.push_back(child);
      }
      t.nodes[leaf_id].first_child = first;

      // Backup leaf -> root.
      double g = leaf_value;
      for (int i = static_cast<int>(t.path.size()) - 1; i >= 0; --i) {
        Node& n = t.nodes[t.path[i]];
        n.visits += 1;
        n.value_sum += g;
        if (i > 0) {
          const double r_edge =
              edge_reward(t, t.path[i - 1], t.path[i], per_step);
          t.minmax.update(r_edge + gamma * n.value());
          g = r_edge + gamma * g;
        }
      }
    }
  }

  std::vector<SearchResult> results(n_roots);
  for (int r = 0; r < n_roots; ++r) {
    Tree& t = trees[r];
    const Node& root = t.nodes[0];
    SearchResult& res = results[r];
    res.visits.resize(A);
    for (int a = 0; a < A; ++a)
      res.visits[a] = t.nodes[root.first_child + a].visits;
    res.policy = visit_policy(res.visits, 1.0);
    res.value = root.value_sum / std::max(1, root.visits - 1);
  }

  if (tree_dump && n_roots > 0) {
    const Tree& t = trees[0];
    nlohmann::json nodes = nlohmann::json::array();
    for (size_t i = 0; i < t.nodes.size(); ++i) {
      const Node& n = t.nodes[i];
      nodes.push_back({{"id", i},
                       {"prior", n.prior},
                       {"visits", n.visits},
                       {"q", n.value()},
                       {"value_prefix", n.value_prefix},
                       {"is_reset", n.is_reset},
                       {"first_child", n.first_child}});
    }
    nlohmann::json j;
    j["num_simulations"] = cfg.num_simulations;
    j["actions"] = A;
    j["root_value"] = results[0].value;
    j["minmax"] = {{"min", t.minmax.minimum}, {"max", t.minmax.maximum}};
    j["nodes"] = std::move(nodes);
    *tree_dump = j.dump(2);
  }
  return results;
}

int argmax_visits(const SearchResult& r) {
  int best = 0;
  for (size_t a = 1; a < r.visits.size(); ++a)
    if (r.visits[a] > r.visits[best]) best = static_cast<int>(a);
  return best;
}

int sample_visits(const SearchResult& r, double temperature, Rng& rng) {
  const auto pi = visit_policy(r.visits, temperature);
  return rng.categorical(pi);
}

std::string dump_tree_json(const SearchModel& model, const float* root_obs,
                           int64_t obs_size, const SearchConfig& cfg,
                           Rng& rng) {
  std::string dump;
  run_batch(model, root_obs, 1, obs_size, NoiseMode::kEval, cfg, rng, &dump);
  return dump;
}

}  // namespace effzero
