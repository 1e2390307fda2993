#include "hyperadapt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/random.hpp"

namespace hyperadapt {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw DataError("lr0 must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DataError("gamma must lie in (0, 1]");
  if (batch_size == 0) throw DataError("batch size must be at least 1");
  if (epochs == 0) throw DataError("epochs must be at least 1");
}

std::vector<EpochLog> train(Model& model, const TileSet& train_set, const TileSet& test_set, const TrainConfig& cfg,
                            const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  Adam adam(model.blocks(), cfg.adam);
  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::vector<EpochLog> log;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = learning_rate(cfg.lr0, cfg.gamma, epoch);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      std::vector<Tensor> batch;
      std::vector<int> labels;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(train_set.tiles[order[i]]);
        labels.push_back(train_set.labels[order[i]]);
      }
      auto result = forward_backward(model, batch, labels);
      if (!std::isfinite(result.loss)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      loss_sum += result.loss * static_cast<double>(stop - start);
      adam.step(model.blocks(), result.grads, lr);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.train_loss = loss_sum / static_cast<double>(n);
    if (!test_set.empty()) {
      const auto ev = evaluate(model, test_set);
      entry.test_loss = ev.loss;
      entry.test_accuracy = ev.accuracy;
    }
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

std::string format_epoch_csv(const std::vector<EpochLog>& log) {
  std::string out = kEpochCsvHeader;
  out += '\n';
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.lr, e.train_loss, e.test_loss,
                  e.test_accuracy);
    out += buf;
  }
  return out;
}

}  // namespace hyperadapt
