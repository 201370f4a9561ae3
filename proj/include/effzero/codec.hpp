#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace effzero {

// Categorical scalar codec: an invertible contraction
//   h(x) = sign(x) * (sqrt(|x| + 1) - 1) + eps_h * x
// followed by a two-hot target over an odd number of bins spanning [-S, S]
// in transformed space. Decoding is the expectation over bins mapped back
// through the inverse transform.
class ScalarCodec {
 public:
  static constexpr double kEpsH = 0.001;

  ScalarCodec(int half_width, int bins) : half_width_(half_width), bins_(bins) {
    if (bins < 3 || bins % 2 == 0)
      throw std::invalid_argument("codec: bin count must be odd and >= 3");
    step_ = 2.0 * half_width_ / (bins_ - 1);
  }

  int bins() const { return bins_; }
  int half_width() const { return half_width_; }

  static double transform(double x) {
    const double s = x < 0 ? -1.0 : 1.0;
    return s * (std::sqrt(std::abs(x) + 1.0) - 1.0) + kEpsH * x;
  }

  static double inverse_transform(double y) {
    const double s = y < 0 ? -1.0 : 1.0;
    const double a = std::abs(y);
    const double t =
        (std::sqrt(1.0 + 4.0 * kEpsH * (a + 1.0 + kEpsH)) - 1.0) /
        (2.0 * kEpsH);
    return s * (t * t - 1.0);
  }

  double bin_value(int i) const { return -half_width_ + i * step_; }

  // Two-hot target over the bins; clamps |h(x)| to the support and reports
  // whether it saturated.
  std::vector<double> encode(double x, bool* saturated = nullptr) const {
    if (!std::isfinite(x))
      throw std::invalid_argument("codec: non-finite scalar");
    double y = transform(x);
    bool sat = false;
    if (y < -half_width_) {
      y = -half_width_;
      sat = true;
    } else if (y > half_width_) {
      y = half_width_;
      sat = true;
    }
    if (saturated) *saturated = sat;
    std::vector<double> target(bins_, 0.0);
    const double pos = (y + half_width_) / step_;
    int lo = static_cast<int>(std::floor(pos));
    if (lo >= bins_ - 1) lo = bins_ - 2;
    if (lo < 0) lo = 0;
    const double frac = pos - lo;
    target[lo] = 1.0 - frac;
    target[lo + 1] = frac;
    return target;
  }

  // Expectation over bins of a probability vector, mapped back through the
  // inverse transform.
  double decode_probs(const std::vector<double>& probs) const {
    double y = 0.0;
    for (int i = 0; i < bins_; ++i) y += probs[i] * bin_value(i);
    return inverse_transform(y);
  }

  // Softmax then decode; works on any scalar span of length bins().
  template <typename S>
  double decode_logits(const S* logits) const {
    double mx = logits[0];
    for (int i = 1; i < bins_; ++i)
      mx = std::max(mx, static_cast<double>(logits[i]));
    double sum = 0.0;
    double acc = 0.0;
    for (int i = 0; i < bins_; ++i) {
      const double e = std::exp(static_cast<double>(logits[i]) - mx);
      sum += e;
      acc += e * bin_value(i);
    }
    return inverse_transform(acc / sum);
  }

 private:
  int half_width_;
  int bins_;
  double step_;
};

}  // namespace effzero
