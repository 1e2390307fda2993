#include "hyperadapt/optim.hpp"

#include <cmath>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

Adam::Adam(const std::vector<ParamBlock>& blocks, AdamConfig config) : config_(config) {
  m_.resize(blocks.size());
  v_.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].trainable) continue;
    m_[i].assign(blocks[i].value.size(), 0.0);
    v_[i].assign(blocks[i].value.size(), 0.0);
  }
}

void Adam::step(std::vector<ParamBlock>& blocks, const Gradients& grads, double lr) {
  if (blocks.size() != m_.size() || grads.size() != blocks.size()) {
    throw ShapeError("optimizer state does not match the parameter blocks");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (!blocks[b].trainable) continue;
    auto w = blocks[b].value.data();
    const auto g = grads[b].data();
    if (g.size() != w.size() || m_[b].size() != w.size()) {
      throw ShapeError("gradient for block '" + blocks[b].name + "' has the wrong size");
    }
    auto& m = m_[b];
    auto& v = v_[b];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

double learning_rate(double lr0, double gamma, std::size_t epoch) {
  return lr0 * std::pow(gamma, static_cast<double>(epoch));
}

}  // namespace hyperadapt
