#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hyperadapt/data.hpp"
#include "hyperadapt/model.hpp"
#include "hyperadapt/optim.hpp"

namespace hyperadapt {

struct TrainConfig {
  double lr0 = 0.01;
  double gamma = 0.95;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  AdamConfig adam;

  /// Throws DataError unless lr0 > 0, 0 < gamma ≤ 1, batch_size ≥ 1 and epochs ≥ 1.
  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean over the epoch's batches, weighted by batch size
  double test_loss = 0.0;
  double test_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch Adam on `train`, evaluating on `test` after every epoch. Batches
/// follow a per-epoch seeded shuffle. A non-finite loss aborts with a
/// NumericalError naming the epoch and batch.
std::vector<EpochLog> train(Model& model, const TileSet& train_set, const TileSet& test_set, const TrainConfig& cfg,
                            const EpochCallback& on_epoch = {});

inline constexpr const char* kEpochCsvHeader = "epoch,lr,train_loss,test_loss,test_accuracy";
std::string format_epoch_csv(const std::vector<EpochLog>& log);

}  // namespace hyperadapt
