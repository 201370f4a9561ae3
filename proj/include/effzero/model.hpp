#pragma once

#include <memory>
#include <string>
#include <vector>

#include "effzero/codec.hpp"
#include "effzero/config.hpp"
#include "effzero/nn.hpp"
#include "effzero/rng.hpp"
#include "effzero/serialize.hpp"
#include "effzero/tensor.hpp"

namespace effzero {

struct ModelConfig {
  int obs_channels = 0;  // stacked channels (frames * per-frame channels)
  int obs_height = 0;
  int obs_width = 0;
  int action_count = 0;
  int latent_dim = 64;
  int rep_hidden = 128;
  std::string rep_arch = "mlp";  // mlp | conv
  int lstm_hidden = 32;
  int head_hidden = 32;
  int proj_dim = 128;
  int proj_hidden = 64;
  int support_half_width = 20;
  int support_bins = 41;
  int lstm_reset_horizon = 5;  // zeta
  bool value_prefix = true;    // false swaps in the per-step reward head

  int64_t obs_size() const {
    return static_cast<int64_t>(obs_channels) * obs_height * obs_width;
  }

  static ModelConfig from_run(const RunConfig& rc, int per_frame_channels,
                              int height, int width, int actions) {
    ModelConfig m;
    m.obs_channels = per_frame_channels * rc.frames_stacked;
    m.obs_height = height;
    m.obs_width = width;
    m.action_count = actions;
    m.latent_dim = rc.latent_dim;
    m.rep_hidden = rc.rep_hidden;
    m.rep_arch = rc.rep_arch;
    m.lstm_hidden = rc.lstm_hidden;
    m.head_hidden = rc.head_hidden;
    m.proj_dim = rc.proj_dim;
    m.proj_hidden = rc.proj_hidden;
    m.support_half_width = rc.support_half_width;
    m.support_bins = rc.support_bins;
    m.lstm_reset_horizon = rc.lstm_reset_horizon;
    m.value_prefix = rc.enable_value_prefix;
    return m;
  }
};

// Recurrent state of the value-prefix head for the graph (training) path.
// steps_since_reset counts applications within the current window; the state
// zeroes out when it reaches zeta, after which predictions are independent
// of anything seen before the reset.
template <typename S>
struct VpStateT {
  Tensor<S> h;
  Tensor<S> c;
  int steps_since_reset = 0;
};

template <typename S>
struct PrefixOutputT {
  Tensor<S> logits;
  VpStateT<S> state;
  bool was_reset = false;  // the returned state was zeroed after predicting
};

// The full network set: representation H, dynamics G, value-prefix head R
// (or a per-step reward head), value head V, policy head P, projector P1 and
// predictor P2, plus the categorical scalar codec.
template <typename S>
class ModelSetT {
 public:
  ModelSetT(const ModelConfig& cfg, uint64_t seed)
      : cfg_(cfg), codec_(cfg.support_half_width, cfg.support_bins) {
    Rng rng = Rng::derive(seed, 0x6d6f64656cULL);
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const ScalarCodec& codec() const { return codec_; }
  ParameterStoreT<S>& params() { return params_; }
  const ParameterStoreT<S>& params() const { return params_; }

  void set_train(bool t) { training_ = t; }
  bool training() const { return training_; }

  // --- network applications (graph path) ---

  // H: stacked observation [B, C, H, W] (or flattened [B, C*H*W]) -> latent.
  Tensor<S> represent(const Tensor<S>& obs) const {
    Tensor<S> x = obs;
    if (x.shape().size() == 2) {
      if (x.dim(1) != cfg_.obs_size())
        throw TensorError("represent: expected " +
                          std::to_string(cfg_.obs_size()) +
                          " inputs, got " + shape_str(x.shape()));
      if (cfg_.rep_arch == "conv")
        x = reshape_to_4d(x, cfg_.obs_channels, cfg_.obs_height,
                          cfg_.obs_width);
    } else if (x.shape().size() == 4) {
      if (x.dim(1) != cfg_.obs_channels || x.dim(2) != cfg_.obs_height ||
          x.dim(3) != cfg_.obs_width)
        throw TensorError("represent: observation shape mismatch " +
                          shape_str(x.shape()));
      if (cfg_.rep_arch == "mlp") x = flatten_rows(x);
    } else {
      throw TensorError("represent: expected 2-D or 4-D input");
    }

    if (cfg_.rep_arch == "conv") {
      x = relu(rep_bn1_(rep_conv1_(x), training_));
      x = relu(rep_bn2_(rep_conv2_(x), training_));
      auto y = relu(rep_res_bn1_(rep_res_conv1_(x), training_));
      y = rep_res_bn2_(rep_res_conv2_(y), training_);
      x = relu(add(x, y));
      x = flatten_rows(x);
      return rep_out_(x);
    }
    x = relu(rep_bn1_(rep_fc1_(x), training_));
    auto y = relu(rep_res_bn1_(rep_res_fc1_(x), training_));
    y = rep_res_bn2_(rep_res_fc2_(y), training_);
    x = relu(add(x, y));
    return rep_out_(x);
  }

  // G: next latent from (latent, action one-hot). The incoming state is
  // added back before the activation, so all-zero block weights reduce the
  // map to relu(state).
  Tensor<S> dynamics(const Tensor<S>& state, const Tensor<S>& action_onehot)
      const {
    if (action_onehot.dim(1) != cfg_.action_count)
      throw TensorError("dynamics: expected " +
                        std::to_string(cfg_.action_count) + " actions, got " +
                        shape_str(action_onehot.shape()));
    auto x = concat_cols(state, action_onehot);
    x = dyn_bn1_(dyn_fc1_(x), training_);
    x = relu(add(x, state));
    auto y = relu(dyn_res_bn1_(dyn_res_fc1_(x), training_));
    y = dyn_res_bn2_(dyn_res_fc2_(y), training_);
    return relu(add(x, y));
  }

  VpStateT<S> fresh_vp_state(int batch) const {
    VpStateT<S> s;
    s.h = Tensor<S>::zeros({batch, cfg_.lstm_hidden});
    s.c = Tensor<S>::zeros({batch, cfg_.lstm_hidden});
    s.steps_since_reset = 0;
    return s;
  }

  // R: categorical value-prefix logits plus the advanced recurrent state.
  PrefixOutputT<S> predict_value_prefix(const Tensor<S>& state,
                                        const VpStateT<S>& vp) const {
    PrefixOutputT<S> out;
    auto [h, c] = vp_cell_(state, vp.h, vp.c);
    auto y = relu(vp_bn_(h, training_));
    y = relu(vp_fc_bn_(vp_fc1_(y), training_));
    out.logits = vp_fc2_(y);
    out.state.steps_since_reset = vp.steps_since_reset + 1;
    if (out.state.steps_since_reset >= cfg_.lstm_reset_horizon) {
      out.state = fresh_vp_state(state.dim(0));
      out.was_reset = true;
    } else {
      out.state.h = h;
      out.state.c = c;
    }
    return out;
  }

  // Per-step reward head used when the value-prefix switch is off.
  Tensor<S> predict_reward(const Tensor<S>& state) const {
    auto y = relu(rew_bn_(rew_fc1_(state), training_));
    return rew_fc2_(y);
  }

  Tensor<S> predict_value(const Tensor<S>& state) const {
    auto y = relu(val_bn_(val_fc1_(state), training_));
    return val_fc2_(y);
  }

  Tensor<S> predict_policy(const Tensor<S>& state) const {
    auto y = relu(pol_bn_(pol_fc1_(state), training_));
    return pol_fc2_(y);
  }

  // Projection branches of the consistency loss. The target branch
  // (with_predictor = false) is wrapped in a stop-gradient.
  Tensor<S> project(const Tensor<S>& state, bool with_predictor) const {
    auto p1 = [&](const Tensor<S>& x) {
      auto y = relu(proj_bn1_(proj_fc1_(x), training_));
      y = relu(proj_bn2_(proj_fc2_(y), training_));
      return proj_fc3_(y);
    };
    if (!with_predictor) return stop_gradient(p1(state));
    auto y = p1(state);
    auto z = relu(pred_bn_(pred_fc1_(y), training_));
    return pred_fc2_(z);
  }

  Tensor<S> action_onehot(const std::vector<int>& actions) const {
    const int b = static_cast<int>(actions.size());
    std::vector<S> v(static_cast<int64_t>(b) * cfg_.action_count, S(0));
    for (int i = 0; i < b; ++i) {
      if (actions[i] < 0 || actions[i] >= cfg_.action_count)
        throw TensorError("dynamics: invalid action " +
                          std::to_string(actions[i]));
      v[static_cast<int64_t>(i) * cfg_.action_count + actions[i]] = S(1);
    }
    return Tensor<S>::from_data({b, cfg_.action_count}, std::move(v));
  }

  // --- serialization ---

  std::vector<NamedArray> state_arrays() const {
    std::vector<NamedArray> out;
    for (const auto& p : params_.all()) {
      NamedArray a;
      a.name = p.name;
      a.shape = p.value.shape();
      a.values.assign(p.value.data().begin(), p.value.data().end());
      out.push_back(std::move(a));
    }
    for (const auto& [name, buf] : buffers_) {
      NamedArray a;
      a.name = name;
      a.shape = {static_cast<int>(buf->size())};
      a.values.assign(buf->begin(), buf->end());
      out.push_back(std::move(a));
    }
    return out;
  }

  void load_state_arrays(const std::vector<NamedArray>& arrays) {
    auto find = [&](const std::string& name) -> const NamedArray* {
      for (const auto& a : arrays)
        if (a.name == name) return &a;
      return nullptr;
    };
    for (auto& p : params_.all()) {
      const NamedArray* a = find(p.name);
      if (!a)
        throw SerializeError("checkpoint: missing parameter '" + p.name + "'");
      if (numel(a->shape) != p.value.size())
        throw SerializeError("checkpoint: size mismatch for '" + p.name + "'");
      for (int64_t i = 0; i < p.value.size(); ++i)
        p.value.data()[i] = static_cast<S>(a->values[i]);
      std::fill(p.momentum.begin(), p.momentum.end(), S(0));
    }
    for (auto& [name, buf] : buffers_) {
      const NamedArray* a = find(name);
      if (!a)
        throw SerializeError("checkpoint: missing buffer '" + name + "'");
      if (a->values.size() != buf->size())
        throw SerializeError("checkpoint: size mismatch for '" + name + "'");
      for (size_t i = 0; i < buf->size(); ++i)
        (*buf)[i] = static_cast<S>(a->values[i]);
    }
  }

  // Deep copy used for published parameter snapshots.
  std::shared_ptr<ModelSetT<S>> clone() const {
    auto copy = std::make_shared<ModelSetT<S>>(cfg_, 0);
    copy->load_state_arrays(state_arrays());
    copy->set_train(false);
    return copy;
  }

 private:
  BatchNormT<S> make_bn(const std::string& name, int features) {
    BatchNormT<S> bn(params_, name, features);
    buffers_.emplace_back(name + ".running_mean", bn.running_mean);
    buffers_.emplace_back(name + ".running_var", bn.running_var);
    return bn;
  }

  void build(Rng& rng) {
    const int L = cfg_.latent_dim;
    const int A = cfg_.action_count;
    const int bins = cfg_.support_bins;

    if (cfg_.rep_arch == "conv") {
      rep_conv1_ = Conv3x3T<S>(params_, "rep.conv1", cfg_.obs_channels, 16, 1,
                               rng);
      rep_bn1_ = make_bn("rep.bn1", 16);
      rep_conv2_ = Conv3x3T<S>(params_, "rep.conv2", 16, 16, 1, rng);
      rep_bn2_ = make_bn("rep.bn2", 16);
      rep_res_conv1_ = Conv3x3T<S>(params_, "rep.res.conv1", 16, 16, 1, rng);
      rep_res_bn1_ = make_bn("rep.res.bn1", 16);
      rep_res_conv2_ = Conv3x3T<S>(params_, "rep.res.conv2", 16, 16, 1, rng);
      rep_res_bn2_ = make_bn("rep.res.bn2", 16);
      rep_out_ = LinearT<S>(params_, "rep.out",
                            16 * cfg_.obs_height * cfg_.obs_width, L, rng);
    } else {
      rep_fc1_ = LinearT<S>(params_, "rep.fc1",
                            static_cast<int>(cfg_.obs_size()),
                            cfg_.rep_hidden, rng);
      rep_bn1_ = make_bn("rep.bn1", cfg_.rep_hidden);
      rep_res_fc1_ = LinearT<S>(params_, "rep.res.fc1", cfg_.rep_hidden,
                                cfg_.rep_hidden, rng);
      rep_res_bn1_ = make_bn("rep.res.bn1", cfg_.rep_hidden);
      rep_res_fc2_ = LinearT<S>(params_, "rep.res.fc2", cfg_.rep_hidden,
                                cfg_.rep_hidden, rng);
      rep_res_bn2_ = make_bn("rep.res.bn2", cfg_.rep_hidden);
      rep_out_ = LinearT<S>(params_, "rep.out", cfg_.rep_hidden, L, rng);
    }

    dyn_fc1_ = LinearT<S>(params_, "dyn.fc1", L + A, L, rng);
    dyn_bn1_ = make_bn("dyn.bn1", L);
    dyn_res_fc1_ = LinearT<S>(params_, "dyn.res.fc1", L, L, rng);
    dyn_res_bn1_ = make_bn("dyn.res.bn1", L);
    dyn_res_fc2_ = LinearT<S>(params_, "dyn.res.fc2", L, L, rng);
    dyn_res_bn2_ = make_bn("dyn.res.bn2", L);

    vp_cell_ = LstmCellT<S>(params_, "vp.lstm", L, cfg_.lstm_hidden, rng);
    vp_bn_ = make_bn("vp.bn", cfg_.lstm_hidden);
    vp_fc1_ = LinearT<S>(params_, "vp.fc1", cfg_.lstm_hidden,
                         cfg_.head_hidden, rng);
    vp_fc_bn_ = make_bn("vp.fc_bn", cfg_.head_hidden);
    vp_fc2_ = LinearT<S>(params_, "vp.fc2", cfg_.head_hidden, bins, rng,
                         /*zero_init=*/true);

    rew_fc1_ = LinearT<S>(params_, "rew.fc1", L, cfg_.head_hidden, rng);
    rew_bn_ = make_bn("rew.bn", cfg_.head_hidden);
    rew_fc2_ = LinearT<S>(params_, "rew.fc2", cfg_.head_hidden, bins, rng,
                          /*zero_init=*/true);

    val_fc1_ = LinearT<S>(params_, "val.fc1", L, cfg_.head_hidden, rng);
    val_bn_ = make_bn("val.bn", cfg_.head_hidden);
    val_fc2_ = LinearT<S>(params_, "val.fc2", cfg_.head_hidden, bins, rng,
                          /*zero_init=*/true);

    pol_fc1_ = LinearT<S>(params_, "pol.fc1", L, cfg_.head_hidden, rng);
    pol_bn_ = make_bn("pol.bn", cfg_.head_hidden);
    pol_fc2_ = LinearT<S>(params_, "pol.fc2", cfg_.head_hidden, A, rng,
                          /*zero_init=*/true);

    proj_fc1_ = LinearT<S>(params_, "proj.fc1", L, cfg_.proj_hidden, rng);
    proj_bn1_ = make_bn("proj.bn1", cfg_.proj_hidden);
    proj_fc2_ = LinearT<S>(params_, "proj.fc2", cfg_.proj_hidden,
                           cfg_.proj_hidden, rng);
    proj_bn2_ = make_bn("proj.bn2", cfg_.proj_hidden);
    proj_fc3_ = LinearT<S>(params_, "proj.fc3", cfg_.proj_hidden,
                           cfg_.proj_dim, rng);

    pred_fc1_ = LinearT<S>(params_, "pred.fc1", cfg_.proj_dim,
                           cfg_.proj_hidden, rng);
    pred_bn_ = make_bn("pred.bn", cfg_.proj_hidden);
    pred_fc2_ = LinearT<S>(params_, "pred.fc2", cfg_.proj_hidden,
                           cfg_.proj_dim, rng);
  }

  ModelConfig cfg_;
  ScalarCodec codec_;
  ParameterStoreT<S> params_;
  std::vector<std::pair<std::string, std::shared_ptr<std::vector<S>>>>
      buffers_;
  bool training_ = true;

  // representation (conv variant)
  Conv3x3T<S> rep_conv1_, rep_conv2_, rep_res_conv1_, rep_res_conv2_;
  // representation (mlp variant)
  LinearT<S> rep_fc1_, rep_res_fc1_, rep_res_fc2_;
  BatchNormT<S> rep_bn1_, rep_bn2_, rep_res_bn1_, rep_res_bn2_;
  LinearT<S> rep_out_;

  LinearT<S> dyn_fc1_, dyn_res_fc1_, dyn_res_fc2_;
  BatchNormT<S> dyn_bn1_, dyn_res_bn1_, dyn_res_bn2_;

  LstmCellT<S> vp_cell_;
  BatchNormT<S> vp_bn_, vp_fc_bn_;
  LinearT<S> vp_fc1_, vp_fc2_;

  LinearT<S> rew_fc1_, rew_fc2_;
  BatchNormT<S> rew_bn_;
  LinearT<S> val_fc1_, val_fc2_;
  BatchNormT<S> val_bn_;
  LinearT<S> pol_fc1_, pol_fc2_;
  BatchNormT<S> pol_bn_;

  LinearT<S> proj_fc1_, proj_fc2_, proj_fc3_;
  BatchNormT<S> proj_bn1_, proj_bn2_;
  LinearT<S> pred_fc1_, pred_fc2_;
  BatchNormT<S> pred_bn_;
};

using ModelSet = ModelSetT<float>;

}  // namespace effzero
