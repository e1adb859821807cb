#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "epilnet/checkpoint.hpp"
#include "epilnet/data.hpp"
#include "epilnet/model.hpp"

namespace epilnet {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 42;
  double learning_rate = 1e-3;
  GroupMode group_mode = GroupMode::five_class;
  double width_multiplier = 1.0;
  bool shuffle = true;
  std::size_t eval_threads = 1;

  void validate() const;
  ModelConfig model_config() const;
};

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // running, train-mode predictions
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;
  bool best = false;
};

/// Rows are true targets, columns predictions.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  void add(std::size_t truth, std::size_t predicted);
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t total() const;
  std::size_t trace() const;
  std::size_t row_sum(std::size_t truth) const;
  double accuracy() const;
  double recall(std::size_t truth) const;

  /// Labeled text table with a trailing per-class recall column.
  std::string to_table(const std::vector<std::string>& names) const;

 private:
  std::size_t classes_ = 0;
  std::vector<std::size_t> counts_;
};

struct Evaluation {
  double accuracy = 0.0;
  ConfusionMatrix matrix;
  std::vector<std::size_t> predictions;  // in split-index order
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochReport> reports;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Mini-batch Adam on softmax cross-entropy. Normalization statistics come from
/// the train split; the best model is the first epoch with the highest val accuracy.
TrainResult train(EpilNet<float> model, const EegDataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Eval-mode accuracy on one split, fanned out over `threads` contiguous ranges.
Evaluation evaluate(const EpilNet<float>& model, const NormStats& norm, const EegDataset& dataset, Split split,
                    std::size_t threads = 1);
Evaluation evaluate(const Checkpoint& checkpoint, const EegDataset& dataset, Split split, std::size_t threads = 1);

/// "epoch,train_loss,train_acc,val_acc,best" rows; wall time is left out so reruns match byte for byte.
void write_epoch_reports(std::ostream& out, const std::vector<EpochReport>& reports);

}  // namespace epilnet
