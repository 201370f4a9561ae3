#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "effzero/config.hpp"
#include "effzero/formulas.hpp"
#include "effzero/model.hpp"
#include "effzero/rng.hpp"

namespace effzero {

// Batched evaluation exchanged with the model during search. All arrays are
// row-major with one row per tree being advanced.
struct ModelBatchEval {
  int rows = 0;
  std::vector<float> latent;    // [rows * latent_dim]
  std::vector<float> prefix;    // decoded value prefix (or per-step reward)
  std::vector<float> value;     // decoded value
  std::vector<float> priors;    // [rows * actions], softmax
  std::vector<float> vp_h;      // [rows * vp_dim]
  std::vector<float> vp_c;      // [rows * vp_dim]
  std::vector<int> vp_steps;    // steps_since_reset of the returned state
  std::vector<uint8_t> vp_reset;  // state was zeroed after predicting
};

// Model surface the search drives. Implemented by the learned network set
// and by exact toy-environment models in tests.
class SearchModel {
 public:
  virtual ~SearchModel() = default;
  virtual int action_count() const = 0;
  virtual int latent_dim() const = 0;
  virtual int vp_dim() const = 0;  // 0 when the model is stateless
  // True when prefix carries per-step rewards instead of running sums, in
  // which case backup skips the differencing.
  virtual bool per_step_reward() const = 0;
  virtual void initial_inference(const float* obs, int rows, int64_t obs_size,
                                 ModelBatchEval* out) const = 0;
  virtual void recurrent_inference(const float* latents, const int* actions,
                                   const float* vp_h, const float* vp_c,
                                   const int* steps, int rows,
                                   ModelBatchEval* out) const = 0;
};

// Learned-network adapter. Expects an eval-mode model; inference runs under
// NoGradGuard so a snapshot can serve many threads.
class NetworkSearchModel : public SearchModel {
 public:
  explicit NetworkSearchModel(const ModelSet& model) : model_(model) {}

  int action_count() const override { return model_.config().action_count; }
  int latent_dim() const override { return model_.config().latent_dim; }
  int vp_dim() const override {
    return model_.config().value_prefix ? model_.config().lstm_hidden : 0;
  }
  bool per_step_reward() const override {
    return !model_.config().value_prefix;
  }
  void initial_inference(const float* obs, int rows, int64_t obs_size,
                         ModelBatchEval* out) const override;
  void recurrent_inference(const float* latents, const int* actions,
                           const float* vp_h, const float* vp_c,
                           const int* steps, int rows,
                           ModelBatchEval* out) const override;

 private:
  const ModelSet& model_;
};

enum class NoiseMode { kTrain, kReanalyze, kEval };

struct SearchConfig {
  int num_simulations = 25;
  double discount = 0.988;
  double uct_c1 = 1.25;
  double uct_c2 = 19652.0;
  double dirichlet_alpha = 0.3;
  double dirichlet_frac = 0.25;
  double softminmax_eps = 0.01;

  static SearchConfig from_run(const RunConfig& rc) {
    SearchConfig s;
    s.num_simulations = rc.num_simulations;
    s.discount = rc.discount;
    s.uct_c1 = rc.uct_c1;
    s.uct_c2 = rc.uct_c2;
    s.dirichlet_alpha = rc.dirichlet_alpha;
    s.dirichlet_frac = rc.dirichlet_frac;
    s.softminmax_eps = rc.softminmax_eps;
    return s;
  }
};

struct SearchResult {
  std::vector<int64_t> visits;  // per root action; sums to num_simulations
  std::vector<double> policy;   // visit distribution at temperature 1
  double value = 0.0;           // mean of the backed-up root values
};

// Runs num_simulations simulations on every root, advancing all trees in
// lockstep so each simulation issues one batched model call. When tree_dump
// is non-null it receives a JSON dump of the first tree's nodes.
std::vector<SearchResult> run_batch(const SearchModel& model,
                                    const float* root_obs, int n_roots,
                                    int64_t obs_size, NoiseMode mode,
                                    const SearchConfig& cfg, Rng& rng,
                                    std::string* tree_dump = nullptr);

// Greedy action: most-visited root child, ties toward the lowest index.
int argmax_visits(const SearchResult& r);

// Samples an action from the visit distribution at the given temperature.
int sample_visits(const SearchResult& r, double temperature, Rng& rng);

// JSON dump of one finished search tree (debugging aid).
std::string dump_tree_json(const SearchModel& model, const float* root_obs,
                           int64_t obs_size, const SearchConfig& cfg,
                           Rng& rng);

}  // namespace effzero
