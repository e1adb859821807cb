#include "epilnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "epilnet/optim.hpp"

namespace epilnet {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be finite and >= 0");
  if (eval_threads < 1) throw ConfigError("eval threads must be >= 1");
}

ModelConfig TrainConfig::model_config() const {
  return {GroupMapping::for_mode(group_mode).class_count(), width_multiplier, seed};
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) throw ShapeError("confusion class", classes_, std::max(truth, predicted));
  ++counts_[truth * classes_ + predicted];
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < classes_; ++i) t += at(i, i);
  return t;
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t j = 0; j < classes_; ++j) s += at(truth, j);
  return s;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
}

double ConfusionMatrix::recall(std::size_t truth) const {
  const auto n = row_sum(truth);
  return n == 0 ? 0.0 : static_cast<double>(at(truth, truth)) / static_cast<double>(n);
}

std::string ConfusionMatrix::to_table(const std::vector<std::string>& names) const {
  std::size_t width = 9;
  for (const auto& n : names) width = std::max(width, n.size() + 2);
  for (const auto c : counts_) width = std::max(width, std::to_string(c).size() + 2);
  auto cell = [&](const std::string& s) {
    std::string out(width > s.size() ? width - s.size() : 0, ' ');
    return out + s;
  };
  std::ostringstream out;
  out << cell("true\\pred");
  for (std::size_t j = 0; j < classes_; ++j) out << cell(j < names.size() ? names[j] : std::to_string(j));
  out << cell("recall") << '\n';
  for (std::size_t i = 0; i < classes_; ++i) {
    out << cell(i < names.size() ? names[i] : std::to_string(i));
    for (std::size_t j = 0; j < classes_; ++j) out << cell(std::to_string(at(i, j)));
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", recall(i));
    out << cell(buf) << '\n';
  }
  return out.str();
}

namespace {

// Every record normalized once, row-major (record, sample).
std::vector<float> normalized_inputs(const EegDataset& dataset, const NormStats& norm) {
  std::vector<float> out(dataset.records.size() * kWindowLength);
  for (std::size_t r = 0; r < dataset.records.size(); ++r) {
    const auto& s = dataset.records[r].samples;
    for (std::size_t t = 0; t < kWindowLength; ++t)
      out[r * kWindowLength + t] = static_cast<float>((s[t] - norm.mean) / norm.std);
  }
  return out;
}

SignalTensor<float> gather(const std::vector<float>& inputs, std::span<const std::size_t> rows) {
  SignalTensor<float> batch({rows.size(), 1, kWindowLength});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(rows[i] * kWindowLength), kWindowLength,
                batch.values().begin() + static_cast<std::ptrdiff_t>(i * kWindowLength));
  return batch;
}

std::vector<std::size_t> predict_rows(const EpilNet<float>& model, const std::vector<float>& inputs,
                                      std::span<const std::size_t> rows, std::size_t threads) {
  constexpr std::size_t kEvalBatch = 64;
  const std::size_t classes = model.class_count();
  std::vector<std::size_t> predictions(rows.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; b += kEvalBatch) {
      const std::size_t n = std::min(kEvalBatch, end - b);
      const auto logits = forward(model, gather(inputs, rows.subspan(b, n)));
      for (std::size_t i = 0; i < n; ++i)
        predictions[b + i] = argmax<float>(std::span<const float>(logits.data() + i * classes, classes));
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, (rows.size() + kEvalBatch - 1) / kEvalBatch));
  if (threads == 1) {
    work(0, rows.size());
    return predictions;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (rows.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = std::min(rows.size(), t * chunk);
    const std::size_t end = std::min(rows.size(), begin + chunk);
    pool.emplace_back(work, begin, end);
  }
  for (auto& th : pool) th.join();
  return predictions;
}

Evaluation evaluate_inputs(const EpilNet<float>& model, const EegDataset& dataset, const std::vector<float>& inputs,
                           Split split, std::size_t threads) {
  const auto rows = dataset.indices(split);
  if (rows.empty()) throw TrainingError("split '" + to_string(split) + "' is empty");
  Evaluation out;
  out.predictions = predict_rows(model, inputs, rows, threads);
  out.matrix = ConfusionMatrix(model.class_count());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.matrix.add(static_cast<std::size_t>(dataset.records[rows[i]].target), out.predictions[i]);
  out.accuracy = out.matrix.accuracy();
  return out;
}

void check_compatible(const EpilNet<float>& model, const EegDataset& dataset) {
  if (!dataset.mapping) throw TrainingError("dataset has no group mapping (call map_group first)");
  if (model.class_count() != dataset.mapping->class_count())
    throw TrainingError("model has " + std::to_string(model.class_count()) + " classes but the " +
                        to_string(dataset.mapping->mode) + "-class grouping has " +
                        std::to_string(dataset.mapping->class_count()));
  if (dataset.splits.size() != dataset.records.size()) throw TrainingError("dataset has no split assignment");
}

}  // namespace

Evaluation evaluate(const EpilNet<float>& model, const NormStats& norm, const EegDataset& dataset, Split split,
                    std::size_t threads) {
  check_compatible(model, dataset);
  return evaluate_inputs(model, dataset, normalized_inputs(dataset, norm), split, threads);
}

Evaluation evaluate(const Checkpoint& checkpoint, const EegDataset& dataset, Split split, std::size_t threads) {
  return evaluate(checkpoint.model, checkpoint.norm, dataset, split, threads);
}

TrainResult train(EpilNet<float> model, const EegDataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  check_compatible(model, dataset);
  auto train_rows = dataset.indices(Split::train);
  if (train_rows.empty()) throw TrainingError("train split is empty");
  if (dataset.count(Split::val) == 0) throw TrainingError("val split is empty");

  const NormStats norm = compute_norm_stats(dataset);
  const auto inputs = normalized_inputs(dataset, norm);
  const auto manifest = model.manifest();
  OptimizerState<float> optimizer(model.blob_size(), AdamConfig{config.learning_rate});
  std::vector<float> grad_blob(model.blob_size(), 0.0f);
  std::vector<std::size_t> labels;
  std::mt19937_64 rng(config.seed);

  TrainResult result;
  result.best.norm = norm;
  result.best.metadata.group_mode = dataset.mapping->mode;
  result.best.metadata.class_names = dataset.mapping->names;
  result.best.metadata.seed = config.seed;
  double best_val = -1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    if (config.shuffle) std::shuffle(train_rows.begin(), train_rows.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < train_rows.size(); b += config.batch_size) {
      const auto rows = std::span<const std::size_t>(train_rows).subspan(b, std::min(config.batch_size, train_rows.size() - b));
      labels.resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = static_cast<std::size_t>(dataset.records[rows[i]].target);

      ForwardTape<float> tape;
      const auto logits = forward_train(model, gather(inputs, rows), tape);
      const auto ce = softmax_cross_entropy<float>(logits, labels);
      if (!std::isfinite(ce.mean_loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b / config.batch_size + 1));
      loss_sum += static_cast<double>(ce.mean_loss) * static_cast<double>(rows.size());
      const std::size_t classes = model.class_count();
      for (std::size_t i = 0; i < rows.size(); ++i)
        if (argmax<float>(std::span<const float>(ce.probabilities.data() + i * classes, classes)) == labels[i]) ++correct;

      backward(model, tape, ce.grad_logits, std::span<float>(grad_blob));
      const auto step = begin_adam_step(optimizer);
      std::size_t index = 0;
      model.for_each_tensor([&](const ManifestEntry& entry, std::span<float> values) {
        const auto& expected = manifest[index++];
        if (!entry.trainable) return;
        const auto at = expected.offset;
        adam_update_segment<float>(step, optimizer.config, values, std::span<const float>(grad_blob).subspan(at, values.size()),
                                   std::span<float>(optimizer.first_moment).subspan(at, values.size()),
                                   std::span<float>(optimizer.second_moment).subspan(at, values.size()));
      });
    }

    EpochReport report;
    report.epoch = epoch;
    report.train_loss = loss_sum / static_cast<double>(train_rows.size());
    report.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_rows.size());
    report.val_accuracy = evaluate_inputs(model, dataset, inputs, Split::val, config.eval_threads).accuracy;
    if (report.val_accuracy > best_val) {
      best_val = report.val_accuracy;
      report.best = true;
      result.best.model = model;
      result.best.metadata.best_epoch = epoch;
      result.best.metadata.val_accuracy = report.val_accuracy;
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.reports.push_back(report);
    if (on_epoch) on_epoch(report);
  }
  result.best.digest = model_digest(result.best.model);
  return result;
}

void write_epoch_reports(std::ostream& out, const std::vector<EpochReport>& reports) {
  out << "epoch,train_loss,train_acc,val_acc,best\n";
  char buf[160];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%d\n", r.epoch, r.train_loss, r.train_accuracy, r.val_accuracy,
                  r.best ? 1 : 0);
    out << buf;
  }
}

}  // namespace epilnet
