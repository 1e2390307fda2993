#pragma once

#include <cstdint>
#include <vector>

#include "hyperadapt/model.hpp"

namespace hyperadapt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam without weight decay. Moments are kept only for
/// trainable blocks; frozen blocks are never written.
class Adam {
 public:
  explicit Adam(const std::vector<ParamBlock>& blocks, AdamConfig config = {});

  void step(std::vector<ParamBlock>& blocks, const Gradients& grads, double lr);
  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Vector> m_;
  std::vector<Vector> v_;
  std::uint64_t t_ = 0;
};

/// lr0 · gamma^epoch, epochs counted from 0.
double learning_rate(double lr0, double gamma, std::size_t epoch);

}  // namespace hyperadapt
