#pragma once

// Shared test scaffolding: the finite-difference gradient oracle, an exact
// DeepSea search model, and a value-iteration oracle for it.

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "effzero/env.hpp"
#include "effzero/mcts.hpp"
#include "effzero/nn.hpp"
#include "effzero/tensor.hpp"

namespace effzero::testing {

// Central finite differences against reverse-mode gradients. `forward`
// rebuilds the graph from the parameter tensors on every call. Returns the
// worst relative error across all coordinates.
//
// Coordinates whose h-step difference disagrees are re-measured at h/10:
// batchnorm centers preactivations at zero, so an h-wide probe regularly
// straddles a relu kink where the difference quotient itself is invalid. A
// wrong analytic gradient still disagrees after refinement.
inline double max_grad_rel_error(std::vector<Tensor<double>> params,
                                 const std::function<Tensor<double>()>& forward,
                                 double h = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  auto loss = forward();
  loss.backward();

  double worst = 0.0;
  for (auto& p : params) {
    const auto grads = p.grad();
    for (int64_t i = 0; i < p.size(); ++i) {
      const auto probe = [&](double step) {
        const double keep = p.data()[i];
        p.data()[i] = keep + step;
        const double up = forward().item();
        p.data()[i] = keep - step;
        const double down = forward().item();
        p.data()[i] = keep;
        return (up - down) / (2.0 * step);
      };
      const double an = grads[i];
      const auto rel = [&](double fd) {
        // The floor turns the check absolute near zero, where central
        // differences carry only roundoff.
        return std::abs(fd - an) /
               std::max({std::abs(fd), std::abs(an), 1e-3});
      };
      double err = rel(probe(h));
      if (err > 1e-4) err = rel(probe(h / 10.0));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor<double>::from_data(std::move(shape), std::move(v));
}

// Exact DeepSea model for search: true transitions, rewards and (by
// default) the true optimal value function at leaves, with uniform priors,
// so action ranking still rests on the backup path. Emulates the
// running-sum reward convention so the differencing backup is exercised:
// the one-slot recurrent state carries the within-window prefix. Passing
// with_values = false zeroes the value head, leaving discovery entirely to
// the search; that regime needs far more simulations on deep treasures.
class DeepSeaTrueModel : public SearchModel {
 public:
  DeepSeaTrueModel(int n, double move_cost, int reset_horizon,
                   double gamma = 1.0, bool with_values = true)
      : n_(n), cost_(move_cost), zeta_(reset_horizon) {
    if (with_values) {
      // backward induction over (row, col), terminal rows value 0
      values_.assign(static_cast<size_t>(n) * n, 0.0f);
      for (int row = n - 1; row >= 0; --row)
        for (int col = 0; col < n; ++col) {
          double best = -1e18;
          for (int a = 0; a < 2; ++a) {
            const bool right = a == 1;
            double r = right ? -cost_ : 0.0;
            double next = 0.0;
            if (row == n - 1) {
              if (right && col == n - 1) r += 1.0;
            } else {
              const int ncol = std::clamp(col + (right ? 1 : -1), 0, n - 1);
              next = values_[static_cast<size_t>(row + 1) * n + ncol];
            }
            best = std::max(best, r + gamma * next);
          }
          values_[static_cast<size_t>(row) * n + col] =
              static_cast<float>(best);
        }
    }
  }

  int action_count() const override { return 2; }
  int latent_dim() const override { return 3; }  // row, col, terminal
  int vp_dim() const override { return 1; }
  bool per_step_reward() const override { return false; }

  void initial_inference(const float* obs, int rows, int64_t obs_size,
                         ModelBatchEval* out) const override {
    out->rows = rows;
    out->latent.assign(rows * 3, 0.0f);
    out->prefix.assign(rows, 0.0f);
    out->value.assign(rows, 0.0f);
    out->priors.assign(rows * 2, 0.5f);
    out->vp_h.assign(rows, 0.0f);
    out->vp_c.assign(rows, 0.0f);
    out->vp_steps.assign(rows, 0);
    out->vp_reset.assign(rows, 0);
    // observation is one stacked frame set; the latest frame is last
    const int64_t frame = static_cast<int64_t>(n_) * n_;
    for (int r = 0; r < rows; ++r) {
      const float* last = obs + (r + 1) * obs_size - frame;
      float row = -1, col = -1;
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j)
          if (last[i * n_ + j] > 0.5f) {
            row = static_cast<float>(i);
            col = static_cast<float>(j);
          }
      const bool terminal = row < 0;
      out->latent[r * 3 + 0] = terminal ? 0.0f : row;
      out->latent[r * 3 + 1] = terminal ? 0.0f : col;
      out->latent[r * 3 + 2] = terminal ? 1.0f : 0.0f;
      out->value[r] = state_value(out->latent[r * 3 + 0],
                                  out->latent[r * 3 + 1], terminal);
    }
  }

  void recurrent_inference(const float* latents, const int* actions,
                           const float* vp_h, const float* vp_c,
                           const int* steps, int rows,
                           ModelBatchEval* out) const override {
    (void)vp_c;
    out->rows = rows;
    out->latent.resize(rows * 3);
    out->prefix.resize(rows);
    out->value.resize(rows);
    out->priors.assign(rows * 2, 0.5f);
    out->vp_h.resize(rows);
    out->vp_c.assign(rows, 0.0f);
    out->vp_steps.resize(rows);
    out->vp_reset.resize(rows);
    for (int r = 0; r < rows; ++r) {
      const float row = latents[r * 3 + 0];
      const float col = latents[r * 3 + 1];
      const bool terminal = latents[r * 3 + 2] > 0.5f;
      const bool right = actions[r] == 1;
      float reward = 0.0f;
      float nrow = row, ncol = col;
      bool nterm = terminal;
      if (!terminal) {
        if (right) reward -= static_cast<float>(cost_);
        if (static_cast<int>(row) == n_ - 1) {
          if (right && static_cast<int>(col) == n_ - 1) reward += 1.0f;
          nterm = true;
          nrow = ncol = 0.0f;
        } else {
          ncol = std::clamp(col + (right ? 1.0f : -1.0f), 0.0f,
                            static_cast<float>(n_ - 1));
          nrow = row + 1.0f;
        }
      }
      out->latent[r * 3 + 0] = nterm ? 0.0f : nrow;
      out->latent[r * 3 + 1] = nterm ? 0.0f : ncol;
      out->latent[r * 3 + 2] = nterm ? 1.0f : 0.0f;
      out->value[r] = state_value(nrow, ncol, nterm);
      // running prefix within the zeta-window; parent state row zeroed
      // after reset keeps the differencing exact
      const float prefix = vp_h[r] + reward;
      out->prefix[r] = prefix;
      const int next_steps = steps[r] + 1;
      if (next_steps >= zeta_) {
        out->vp_h[r] = 0.0f;
        out->vp_steps[r] = 0;
        out->vp_reset[r] = 1;
      } else {
        out->vp_h[r] = prefix;
        out->vp_steps[r] = next_steps;
        out->vp_reset[r] = 0;
      }
    }
  }

 private:
  float state_value(float row, float col, bool terminal) const {
    if (terminal || values_.empty()) return 0.0f;
    return values_[static_cast<size_t>(row) * n_ + static_cast<size_t>(col)];
  }

  int n_;
  double cost_;
  int zeta_;
  std::vector<float> values_;  // empty when with_values = false
};

// Exact optimal action for every live DeepSea state by backward induction.
struct DeepSeaValueIteration {
  int n;
  double cost;
  double gamma;
  std::map<std::pair<int, int>, double> value;
  std::map<std::pair<int, int>, int> best_action;

  DeepSeaValueIteration(int n_, double cost_, double gamma_)
      : n(n_), cost(cost_), gamma(gamma_) {
    for (int row = n - 1; row >= 0; --row) {
      for (int col = 0; col <= row; ++col) {
        double best = -1e18;
        int arg = 0;
        for (int a = 0; a < 2; ++a) {
          const bool right = a == 1;
          double r = right ? -cost : 0.0;
          double next = 0.0;
          if (row == n - 1) {
            if (right && col == n - 1) r += 1.0;
          } else {
            const int ncol =
                std::clamp(col + (right ? 1 : -1), 0, n - 1);
            next = at_next(row + 1, ncol);
          }
          const double q = r + gamma * next;
          if (q > best + 1e-12) {
            best = q;
            arg = a;
          }
        }
        value[{row, col}] = best;
        best_action[{row, col}] = arg;
      }
    }
  }

  double at_next(int row, int col) const {
    auto it = value.find({row, col});
    return it == value.end() ? 0.0 : it->second;
  }
};

}  // namespace effzero::testing
