#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cbgs/error.hpp"

namespace cbgs {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a flat parameter array. Elements with non-finite
/// gradients are skipped (parameter and moments untouched) and counted.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(std::size_t n, AdamConfig cfg = {}) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads, double lr);

  /// Zero-initialized rows for appended kernels.
  void append(std::size_t extra) {
    m_.resize(m_.size() + extra, 0.0);
    v_.resize(v_.size() + extra, 0.0);
  }

  /// Keep rows of `width` consecutive elements where keep[row] != 0.
  void filter(const std::vector<std::uint8_t>& keep, std::size_t width);

  std::size_t size() const { return m_.size(); }
  long steps() const { return step_; }
  long skipped() const { return skipped_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  long step_ = 0;
  long skipped_ = 0;
};

/// Linear interpolation from lr_init (iter 0) to lr_final (iter total-1).
double linear_lr(double lr_init, double lr_final, long iter, long total);

struct LrSchedule {
  double init = 0.0;
  double final_value = 0.0;
  double at(long iter, long total) const { return linear_lr(init, final_value, iter, total); }
};

}  // namespace cbgs
