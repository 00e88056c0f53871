#include "cbgs/optimizer.hpp"

#include <cmath>

namespace cbgs {

void AdamState::step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ValidationError("Adam step with mismatched parameter/gradient sizes");
  }
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    if (!std::isfinite(g)) {
      ++skipped_;
      continue;
    }
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    double mhat = m_[i] / bc1;
    double vhat = v_[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

void AdamState::filter(const std::vector<std::uint8_t>& keep, std::size_t width) {
  std::size_t out = 0;
  for (std::size_t row = 0; row < keep.size(); ++row) {
    if (!keep[row]) continue;
    for (std::size_t c = 0; c < width; ++c) {
      m_[out * width + c] = m_[row * width + c];
      v_[out * width + c] = v_[row * width + c];
    }
    ++out;
  }
  m_.resize(out * width);
  v_.resize(out * width);
}

double linear_lr(double lr_init, double lr_final, long iter, long total) {
  if (total <= 1) return lr_init;
  double frac = double(iter) / double(total - 1);
  if (frac < 0.0) frac = 0.0;
  if (frac > 1.0) frac = 1.0;
  return lr_init + (lr_final - lr_init) * frac;
}

}  // namespace cbgs
