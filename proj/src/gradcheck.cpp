#include "hyperadapt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/random.hpp"
#include "hyperadapt/synth.hpp"

namespace hyperadapt {

bool GradcheckReport::passed() const {
  return std::all_of(blocks.begin(), blocks.end(),
                     [&](const BlockCheck& b) { return std::isfinite(b.worst_relative) && b.worst_relative <= tolerance; });
}

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& b : blocks) w = std::max(w, b.worst_relative);
  return w;
}

GradcheckReport gradcheck(const Model& model, const Tensor& x, int label, const GradcheckOptions& opts) {
  if (!(opts.eps > 0.0)) throw DataError("gradcheck step must be positive");
  auto analytic = model.zero_gradients();
  model.accumulate_gradients(x, label, 1.0, analytic);

  Model probe = model;
  probe.flip_first_layer_gradient = false;
  GradcheckReport report;
  report.tolerance = opts.tolerance;
  for (std::size_t b = 0; b < probe.blocks().size(); ++b) {
    if (!probe.blocks()[b].trainable) continue;
    BlockCheck check;
    check.name = probe.blocks()[b].name;
    auto values = probe.blocks()[b].value.data();
    check.count = values.size();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + opts.eps;
      const double up = cross_entropy(probe.logits(x), label);
      values[i] = saved - opts.eps;
      const double down = cross_entropy(probe.logits(x), label);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[b][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opts.floor});
      if (!(rel <= check.worst_relative)) {
        check.worst_relative = rel;
        check.worst_index = i;
      }
      check.worst_absolute = std::max(check.worst_absolute, abs_err);
    }
    report.blocks.push_back(check);
  }
  return report;
}

MicroProblem micro_problem(Method method, const MicroModelOptions& opts) {
  const auto rgb = synth_filter_bank(opts.out_channels, opts.kernel, mix_seed(opts.seed, 1));
  ModelBuildOptions build;
  build.channels = opts.channels;
  build.rank = opts.rank;
  build.padding = opts.padding;
  build.head.pool_h = opts.pool;
  build.head.pool_w = opts.pool;
  build.head.classes = opts.classes;
  build.seed = mix_seed(opts.seed, 2);
  Model model = build_model(method, rgb, build);

  Rng rng(mix_seed(opts.seed, 3));
  for (auto& block : model.blocks()) {
    if (!block.trainable) continue;
    auto fresh = normal_vector(rng, block.value.size(), 0.5);
    std::copy(fresh.begin(), fresh.end(), block.value.data().begin());
  }
  Tensor input({opts.channels, opts.size, opts.size}, normal_vector(rng, opts.channels * opts.size * opts.size));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(opts.classes) - 1);
  const int label = pick(rng);
  return {std::move(model), std::move(input), label};
}

}  // namespace hyperadapt
