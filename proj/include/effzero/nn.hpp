#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "effzero/rng.hpp"
#include "effzero/tensor.hpp"

namespace effzero {

// A named trainable tensor with its momentum buffer.
template <typename S>
struct ParameterT {
  std::string name;
  Tensor<S> value;
  std::vector<S> momentum;

  ParameterT() = default;
  ParameterT(std::string n, Tensor<S> t) : name(std::move(n)), value(t) {
    value.set_requires_grad(true);
    momentum.assign(value.size(), S(0));
  }
};

template <typename S>
class ParameterStoreT {
 public:
  Tensor<S> create(const std::string& name, Shape shape,
                   std::vector<S> data) {
    params_.emplace_back(name, Tensor<S>::from_data(std::move(shape),
                                                    std::move(data)));
    return params_.back().value;
  }

  std::vector<ParameterT<S>>& all() { return params_; }
  const std::vector<ParameterT<S>>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  S squared_norm() const {
    S acc = S(0);
    for (const auto& p : params_)
      for (S x : p.value.data()) acc += x * x;
    return acc;
  }

 private:
  std::vector<ParameterT<S>> params_;
};

// Global-norm clip, then momentum SGD with the c*||theta||^2 decay term's
// gradient (2*c*theta) folded into the update. The clip covers only the loss
// gradients, not the decay term. Returns the pre-clip global norm.
template <typename S>
S sgd_step(ParameterStoreT<S>& store, double lr, double momentum,
           double weight_decay, double clip_norm) {
  double sq = 0.0;
  for (auto& p : store.all()) {
    const auto& g = p.value.grad_view();
    for (S x : g) {
      if (!std::isfinite(static_cast<double>(x)))
        throw TensorError("sgd_step: non-finite gradient in parameter '" +
                          p.name + "'");
      sq += static_cast<double>(x) * static_cast<double>(x);
    }
  }
  const double norm = std::sqrt(sq);
  const double scale =
      (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  for (auto& p : store.all()) {
    auto& g = p.value.grad();
    auto& v = p.value.data();
    auto& m = p.momentum;
    for (size_t i = 0; i < v.size(); ++i) {
      const S eff = static_cast<S>(static_cast<double>(g[i]) * scale +
                                   2.0 * weight_decay *
                                       static_cast<double>(v[i]));
      m[i] = static_cast<S>(momentum * static_cast<double>(m[i]) +
                            static_cast<double>(eff));
      v[i] -= static_cast<S>(lr * static_cast<double>(m[i]));
    }
  }
  return static_cast<S>(norm);
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename S>
struct LinearT {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // [out]

  LinearT() = default;
  LinearT(ParameterStoreT<S>& store, const std::string& name, int in, int out,
          Rng& rng, bool zero_init = false) {
    std::vector<S> wd(static_cast<int64_t>(in) * out, S(0));
    if (!zero_init) {
      const double bound = std::sqrt(6.0 / (in + out));
      for (auto& x : wd) x = static_cast<S>(rng.uniform(-bound, bound));
    }
    w = store.create(name + ".w", {in, out}, std::move(wd));
    b = store.create(name + ".b", {out}, std::vector<S>(out, S(0)));
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return add_bias(matmul(x, w), b);
  }
};

// Batch normalization over dim 1 of [B, F] or [B, C, H, W]. Training
// updates running statistics in place; eval mode is a pure affine map of the
// frozen statistics.
template <typename S>
struct BatchNormT {
  Tensor<S> gamma;  // [F]
  Tensor<S> beta;   // [F]
  std::shared_ptr<std::vector<S>> running_mean;
  std::shared_ptr<std::vector<S>> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormT() = default;
  BatchNormT(ParameterStoreT<S>& store, const std::string& name, int features) {
    gamma = store.create(name + ".gamma", {features},
                         std::vector<S>(features, S(1)));
    beta = store.create(name + ".beta", {features},
                        std::vector<S>(features, S(0)));
    running_mean = std::make_shared<std::vector<S>>(features, S(0));
    running_var = std::make_shared<std::vector<S>>(features, S(1));
  }

  Tensor<S> operator()(const Tensor<S>& x, bool training) const {
    const auto& sh = x.shape();
    if (sh.size() != 2 && sh.size() != 4)
      throw TensorError("batchnorm: expected 2-D or 4-D, got " +
                        shape_str(sh));
    const int B = sh[0];
    const int F = sh[1];
    const int spatial = sh.size() == 4 ? sh[2] * sh[3] : 1;
    if (F != gamma.dim(0))
      throw TensorError("batchnorm: feature mismatch " + shape_str(sh) +
                        " vs " + shape_str(gamma.shape()));
    const int64_t n_per_feature = static_cast<int64_t>(B) * spatial;

    auto index = [F, spatial](int b, int f, int s) {
      return (static_cast<int64_t>(b) * F + f) * spatial + s;
    };

    std::vector<S> mean(F, S(0)), var(F, S(0));
    if (training) {
      for (int b = 0; b < B; ++b)
        for (int f = 0; f < F; ++f)
          for (int s = 0; s < spatial; ++s) mean[f] += x.data()[index(b, f, s)];
      for (int f = 0; f < F; ++f) mean[f] /= static_cast<S>(n_per_feature);
      for (int b = 0; b < B; ++b)
        for (int f = 0; f < F; ++f)
          for (int s = 0; s < spatial; ++s) {
            const S d = x.data()[index(b, f, s)] - mean[f];
            var[f] += d * d;
          }
      for (int f = 0; f < F; ++f) var[f] /= static_cast<S>(n_per_feature);
      for (int f = 0; f < F; ++f) {
        (*running_mean)[f] = static_cast<S>((1.0 - momentum) *
                                                (*running_mean)[f] +
                                            momentum * mean[f]);
        (*running_var)[f] = static_cast<S>((1.0 - momentum) *
                                               (*running_var)[f] +
                                           momentum * var[f]);
      }
    } else {
      mean = *running_mean;
      var = *running_var;
    }

    std::vector<S> inv_std(F);
    for (int f = 0; f < F; ++f)
      inv_std[f] = S(1) / std::sqrt(var[f] + static_cast<S>(eps));

    std::vector<S> xhat(x.size());
    std::vector<S> out(x.size());
    for (int b = 0; b < B; ++b)
      for (int f = 0; f < F; ++f)
        for (int s = 0; s < spatial; ++s) {
          const int64_t i = index(b, f, s);
          xhat[i] = (x.data()[i] - mean[f]) * inv_std[f];
          out[i] = gamma.data()[f] * xhat[i] + beta.data()[f];
        }

    auto nx = x.node();
    auto ng = gamma.node();
    auto nb = beta.node();
    return detail::make_op<S>(
        sh, std::move(out), {nx, ng, nb},
        [nx, ng, nb, B, F, spatial, n_per_feature, training,
         inv_std = std::move(inv_std), xhat = std::move(xhat),
         index](TensorNode<S>& o) {
          std::vector<S> sum_gy(F, S(0)), sum_gy_xhat(F, S(0));
          for (int b = 0; b < B; ++b)
            for (int f = 0; f < F; ++f)
              for (int s = 0; s < spatial; ++s) {
                const int64_t i = index(b, f, s);
                sum_gy[f] += o.g[i];
                sum_gy_xhat[f] += o.g[i] * xhat[i];
              }
          if (ng->requires_grad)
            for (int f = 0; f < F; ++f) ng->grad()[f] += sum_gy_xhat[f];
          if (nb->requires_grad)
            for (int f = 0; f < F; ++f) nb->grad()[f] += sum_gy[f];
          if (nx->requires_grad) {
            auto& gx = nx->grad();
            const S n = static_cast<S>(n_per_feature);
            for (int b = 0; b < B; ++b)
              for (int f = 0; f < F; ++f)
                for (int s = 0; s < spatial; ++s) {
                  const int64_t i = index(b, f, s);
                  if (training) {
                    gx[i] += ng->v[f] * inv_std[f] / n *
                             (n * o.g[i] - sum_gy[f] -
                              xhat[i] * sum_gy_xhat[f]);
                  } else {
                    gx[i] += ng->v[f] * inv_std[f] * o.g[i];
                  }
                }
          }
        });
  }
};

template <typename S>
struct Conv3x3T {
  Tensor<S> w;  // [out, in, 3, 3]
  Tensor<S> b;  // [out]
  int stride = 1;

  Conv3x3T() = default;
  Conv3x3T(ParameterStoreT<S>& store, const std::string& name, int in, int out,
           int stride_, Rng& rng)
      : stride(stride_) {
    const int fan_in = in * 9;
    const double bound = std::sqrt(6.0 / (fan_in + out * 9));
    std::vector<S> wd(static_cast<int64_t>(out) * in * 9);
    for (auto& x : wd) x = static_cast<S>(rng.uniform(-bound, bound));
    w = store.create(name + ".w", {out, in, 3, 3}, std::move(wd));
    b = store.create(name + ".b", {out}, std::vector<S>(out, S(0)));
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return conv2d_3x3(x, w, b, stride);
  }
};

// One gated recurrent (LSTM) step built from verified primitives.
// x: [B, in], h/c: [B, hidden]. Gate order in the packed weights: i, f, g, o.
template <typename S>
struct LstmCellT {
  Tensor<S> wx;  // [in, 4*hidden]
  Tensor<S> wh;  // [hidden, 4*hidden]
  Tensor<S> b;   // [4*hidden]
  int hidden = 0;

  LstmCellT() = default;
  LstmCellT(ParameterStoreT<S>& store, const std::string& name, int in,
            int hidden_, Rng& rng)
      : hidden(hidden_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
    auto init = [&](int64_t n) {
      std::vector<S> d(n);
      for (auto& x : d) x = static_cast<S>(rng.uniform(-bound, bound));
      return d;
    };
    wx = store.create(name + ".wx", {in, 4 * hidden_},
                      init(static_cast<int64_t>(in) * 4 * hidden_));
    wh = store.create(name + ".wh", {hidden_, 4 * hidden_},
                      init(static_cast<int64_t>(hidden_) * 4 * hidden_));
    b = store.create(name + ".b", {4 * hidden_},
                     std::vector<S>(4 * hidden_, S(0)));
  }

  std::pair<Tensor<S>, Tensor<S>> operator()(const Tensor<S>& x,
                                             const Tensor<S>& h,
                                             const Tensor<S>& c) const {
    auto gates = add_bias(add(matmul(x, wx), matmul(h, wh)), b);
    auto i = sigmoid(slice_cols(gates, 0, hidden));
    auto f = sigmoid(slice_cols(gates, hidden, 2 * hidden));
    auto g = tanh_op(slice_cols(gates, 2 * hidden, 3 * hidden));
    auto o = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden));
    auto c_next = add(mul(f, c), mul(i, g));
    auto h_next = mul(o, tanh_op(c_next));
    return {h_next, c_next};
  }
};

}  // namespace effzero
