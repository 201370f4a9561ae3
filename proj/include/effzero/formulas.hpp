#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace effzero {

// Soft min-max statistics over the Q values seen in one tree. The epsilon
// floor on the range keeps near-degenerate trees from normalizing tiny
// differences into full confidence.
struct MinMaxStats {
  double minimum = std::numeric_limits<double>::infinity();
  double maximum = -std::numeric_limits<double>::infinity();
  double eps = 0.01;

  explicit MinMaxStats(double eps_ = 0.01) : eps(eps_) {}

  void update(double q) {
    minimum = std::min(minimum, q);
    maximum = std::max(maximum, q);
  }

  bool empty() const { return minimum > maximum; }

  double normalize(double q) const {
    if (empty()) return 0.0;
    return (q - minimum) / std::max(maximum - minimum, eps);
  }
};

// Exploration weight of Eq:
//   P(s,a) * sqrt(sum_b N) / (1 + N(s,a)) * (c1 + log((sum_b N + c2 + 1)/c2))
inline double uct_exploration(double prior, int64_t child_visits,
                              int64_t total_visits, double c1, double c2) {
  const double pb = c1 + std::log((static_cast<double>(total_visits) + c2 +
                                   1.0) /
                                  c2);
  return prior * std::sqrt(static_cast<double>(total_visits)) /
         (1.0 + static_cast<double>(child_visits)) * pb;
}

struct ChildStats {
  double prior = 0.0;
  int64_t visits = 0;
  double q_raw = 0.0;  // r + gamma * value(child); meaningful when visits > 0
};

// Mean-Q estimate for the unvisited children of a node, computed in
// normalized space:
//   q_hat(s) = (q_hat(parent) + sum_{b visited} Qbar(s,b)) / (1 + #visited)
// with the parent term 0 at the root.
inline double mean_q_estimate(const std::vector<ChildStats>& children,
                              double parent_q_hat, const MinMaxStats& mm) {
  double acc = parent_q_hat;
  int visited = 0;
  for (const auto& c : children) {
    if (c.visits > 0) {
      acc += mm.normalize(c.q_raw);
      ++visited;
    }
  }
  return acc / (1.0 + visited);
}

// Full UCT selection over one node's children; ties break toward the lowest
// action index. Returns the chosen action and writes the node's mean-Q
// estimate (to be chained into the children's selections).
inline int uct_select(const std::vector<ChildStats>& children,
                      double parent_q_hat, const MinMaxStats& mm, double c1,
                      double c2, double* q_hat_out = nullptr) {
  int64_t total = 0;
  for (const auto& c : children) total += c.visits;
  const double q_hat = mean_q_estimate(children, parent_q_hat, mm);
  if (q_hat_out) *q_hat_out = q_hat;
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (size_t a = 0; a < children.size(); ++a) {
    const auto& c = children[a];
    const double qbar = c.visits > 0 ? mm.normalize(c.q_raw) : q_hat;
    const double score =
        qbar + uct_exploration(c.prior, c.visits, total, c1, c2);
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(a);
    }
  }
  return best;
}

// pi(a) = N(a)^(1/T) / sum_b N(b)^(1/T), computed against the max count for
// stability at small temperatures.
inline std::vector<double> visit_policy(const std::vector<int64_t>& counts,
                                        double temperature) {
  std::vector<double> pi(counts.size(), 0.0);
  int64_t mx = 0;
  for (int64_t n : counts) mx = std::max(mx, n);
  if (mx <= 0 || temperature <= 0.0) return pi;
  double sum = 0.0;
  for (size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) {
      pi[i] = std::pow(static_cast<double>(counts[i]) / mx, 1.0 / temperature);
      sum += pi[i];
    }
  }
  for (auto& p : pi) p /= sum;
  return pi;
}

// Root prior perturbation: P := (1 - rho) P + rho * noise.
inline std::vector<double> dirichlet_mix(const std::vector<double>& priors,
                                         const std::vector<double>& noise,
                                         double rho) {
  std::vector<double> out(priors.size());
  for (size_t i = 0; i < priors.size(); ++i)
    out[i] = (1.0 - rho) * priors[i] + rho * noise[i];
  return out;
}

// Staleness-dependent reward horizon:
//   l = clip(k - floor((T_current - T_s) / (tau * T_total)), 1, k)
inline int compute_horizon(int64_t t_current, int64_t t_collect, int k,
                           double tau, int64_t t_total) {
  const double age = static_cast<double>(t_current - t_collect);
  const int shrink =
      static_cast<int>(std::floor(age / (tau * static_cast<double>(t_total))));
  return std::clamp(k - shrink, 1, k);
}

// Value target over an l-step reward window with an optional bootstrap:
//   z = sum_{i<l} gamma^i u_i + gamma^l * bootstrap
// The caller passes the truncated window and drops the bootstrap past
// terminal states by handing bootstrap = 0 with bootstrap_valid = false.
inline double compute_value_target(const std::vector<double>& rewards,
                                   double gamma, double bootstrap,
                                   bool bootstrap_valid) {
  double z = 0.0;
  double g = 1.0;
  for (double u : rewards) {
    z += g * u;
    g *= gamma;
  }
  if (bootstrap_valid) z += g * bootstrap;
  return z;
}

// Importance weights w_i = (1 / (N * P(i)))^beta, normalized by the batch
// maximum.
inline std::vector<double> importance_weights(
    const std::vector<double>& probabilities, int64_t buffer_size,
    double beta) {
  std::vector<double> w(probabilities.size());
  double mx = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    w[i] = std::pow(1.0 / (static_cast<double>(buffer_size) *
                           probabilities[i]),
                    beta);
    mx = std::max(mx, w[i]);
  }
  if (mx > 0.0)
    for (auto& x : w) x /= mx;
  return w;
}

}  // namespace effzero
