#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hyperadapt/model.hpp"

namespace hyperadapt {

struct GradcheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-5;
  /// Denominator floor of the relative error |a − n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

struct BlockCheck {
  std::string name;
  std::size_t count = 0;
  double worst_relative = 0.0;
  double worst_absolute = 0.0;
  std::size_t worst_index = 0;
};

struct GradcheckReport {
  std::vector<BlockCheck> blocks;
  double tolerance = 0.0;
  bool passed() const;
  double worst() const;
};

/// Compares analytic gradients of the single-sample loss with central
/// differences for every entry of every trainable block.
GradcheckReport gradcheck(const Model& model, const Tensor& x, int label, const GradcheckOptions& opts = {});

struct MicroModelOptions {
  std::size_t channels = 8;
  std::size_t out_channels = 4;
  std::size_t kernel = 5;
  std::size_t rank = 2;
  std::size_t size = 12;
  std::size_t padding = 2;
  std::size_t classes = 3;
  std::size_t pool = 2;
  std::uint64_t seed = 0;
};

struct MicroProblem {
  Model model;
  Tensor input;
  int label = 0;
};

/// Small model with randomized (non-adapted) trainable blocks and a random
/// input, so that every gradient path carries signal.
MicroProblem micro_problem(Method method, const MicroModelOptions& opts = {});

}  // namespace hyperadapt
