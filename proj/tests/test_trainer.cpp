#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "epilnet/synthetic.hpp"
#include "epilnet/trainer.hpp"
#include "support.hpp"

using namespace epilnet;

namespace {

// `train_per_class` training and `val_per_class` validation windows per original label.
EegDataset small_split(GroupMode mode, std::size_t train_per_class, std::size_t val_per_class, std::uint64_t seed) {
  auto data = map_group(make_synthetic_dataset(train_per_class + val_per_class, seed), mode);
  data.splits.assign(data.records.size(), Split::train);
  std::vector<std::size_t> seen(5, 0);
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    auto& n = seen[static_cast<std::size_t>(data.records[i].label - 1)];
    if (n++ >= train_per_class) data.splits[i] = Split::val;
  }
  return data;
}

std::vector<float> trainable_values(const EpilNet<float>& model) {
  std::vector<float> out;
  model.for_each_tensor([&](const ManifestEntry& e, std::span<const float> v) {
    if (e.trainable) out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

std::string report_csv(const std::vector<EpochReport>& reports) {
  std::ostringstream out;
  write_epoch_reports(out, reports);
  return out.str();
}

}  // namespace

TEST_CASE("confusion matrix bookkeeping") {
  ConfusionMatrix perfect(3);
  for (std::size_t c = 0; c < 3; ++c)
    for (int k = 0; k < 4; ++k) perfect.add(c, c);
  CHECK(perfect.accuracy() == 1.0);
  CHECK(perfect.total() == 12);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(perfect.at(i, j) == (i == j ? 4u : 0u));

  ConfusionMatrix cm(2);
  cm.add(0, 0);
  cm.add(0, 1);
  cm.add(1, 1);
  cm.add(1, 1);
  CHECK(cm.trace() == 3);
  CHECK(cm.accuracy() == 0.75);
  CHECK(cm.recall(0) == 0.5);
  CHECK(cm.row_sum(1) == 2);
  const auto table = cm.to_table({"healthy", "ictal"});
  CHECK(table.find("healthy") != std::string::npos);
  CHECK(table.find("0.5000") != std::string::npos);
  CHECK_THROWS_AS(cm.add(2, 0), ShapeError);
}

TEST_CASE("constant classifier scores 0.2 on a balanced five-class split") {
  auto data = small_split(GroupMode::five_class, 0, 8, 3);
  auto model = EpilNet<float>::build({5, 0.125, 1});
  model.for_each_tensor([](const ManifestEntry& e, std::span<float> v) {
    if (e.trainable) std::fill(v.begin(), v.end(), 0.0f);
  });
  model.head.bias[0] = 1.0f;
  const auto result = evaluate(model, {0.0, 1.0}, data, Split::val);
  CHECK(result.accuracy == doctest::Approx(0.2));
  CHECK(result.matrix.total() == 40);
  for (std::size_t c = 0; c < 5; ++c) CHECK(result.matrix.row_sum(c) == 8);
  CHECK(result.accuracy == static_cast<double>(result.matrix.trace()) / static_cast<double>(result.matrix.total()));
}

TEST_CASE("evaluation is independent of thread count") {
  auto data = small_split(GroupMode::three_class, 0, 60, 4);
  const auto model = EpilNet<float>::build({3, 0.25, 2});
  const NormStats norm{0.0, 100.0};
  const auto one = evaluate(model, norm, data, Split::val, 1);
  const auto three = evaluate(model, norm, data, Split::val, 3);
  CHECK(one.predictions == three.predictions);
  CHECK(one.accuracy == three.accuracy);
}

TEST_CASE("overfit a 64-record balanced subset") {
  // 13 windows of A-D and 12 of E, width 0.25: a correct backward pass memorizes them.
  auto data = map_group(make_synthetic_dataset(14, 21), GroupMode::five_class);
  data.splits.assign(data.records.size(), Split::val);
  std::size_t taken = 0;
  for (std::size_t i = 0; i < data.records.size() && taken < 64; ++i, ++taken) data.splits[i] = Split::train;
  REQUIRE(data.count(Split::train) == 64);

  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.width_multiplier = 0.25;
  cfg.seed = 42;
  const auto started = std::chrono::steady_clock::now();
  std::size_t first_memorized = 0;
  const auto result = train(EpilNet<float>::build(cfg.model_config()), data, cfg, [&](const EpochReport& r) {
    if (first_memorized == 0 && r.train_accuracy >= 0.99) first_memorized = r.epoch;
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  MESSAGE("first epoch with train accuracy >= 0.99: " << first_memorized << ", " << seconds << " s");
  CHECK(result.reports.back().train_accuracy >= 0.99);
  CHECK(first_memorized > 0);
  CHECK(seconds < 300.0);
}

TEST_CASE("training is deterministic under seed") {
  auto data = small_split(GroupMode::three_class, 12, 4, 8);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.width_multiplier = 0.125;
  cfg.group_mode = GroupMode::three_class;
  const auto a = train(EpilNet<float>::build(cfg.model_config()), data, cfg);
  const auto b = train(EpilNet<float>::build(cfg.model_config()), data, cfg);
  CHECK(report_csv(a.reports) == report_csv(b.reports));
  CHECK(a.best.digest == b.best.digest);
  CHECK(a.best.digest == model_digest(a.best.model));

  const auto csv = report_csv(a.reports);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.starts_with("epoch,train_loss,train_acc,val_acc,best\n1,"));

  std::size_t best_epoch = 0;
  for (const auto& r : a.reports) {
    CHECK(r.train_accuracy >= 0.0);
    CHECK(r.train_accuracy <= 1.0);
    if (r.best) best_epoch = r.epoch;
  }
  CHECK(best_epoch == a.best.metadata.best_epoch);
  for (const auto& r : a.reports)
    if (r.epoch <= best_epoch) CHECK(a.best.metadata.val_accuracy >= r.val_accuracy);
  CHECK(a.best.metadata.class_names == GroupMapping::for_mode(GroupMode::three_class).names);
}

TEST_CASE("zero learning rate without shuffling leaves parameters untouched") {
  auto data = small_split(GroupMode::five_class, 6, 2, 9);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.width_multiplier = 0.125;
  cfg.learning_rate = 0.0;
  cfg.shuffle = false;
  const auto init = EpilNet<float>::build(cfg.model_config());
  const auto result = train(init, data, cfg);
  CHECK(trainable_values(result.best.model) == trainable_values(init));
}

TEST_CASE("trainer errors") {
  auto data = small_split(GroupMode::three_class, 4, 2, 10);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.width_multiplier = 0.125;
  CHECK_THROWS_AS(train(EpilNet<float>::build({5, 0.125, 1}), data, cfg), TrainingError);

  auto no_val = data;
  std::fill(no_val.splits.begin(), no_val.splits.end(), Split::train);
  CHECK_THROWS_AS(train(EpilNet<float>::build({3, 0.125, 1}), no_val, cfg), TrainingError);
  CHECK_THROWS_AS(evaluate(EpilNet<float>::build({3, 0.125, 1}), {}, no_val, Split::test), TrainingError);

  auto poisoned = EpilNet<float>::build({3, 0.125, 1});
  poisoned.head.weights[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(poisoned, data, cfg);
    FAIL("expected non-finite loss error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
  }

  cfg.epochs = 0;
  CHECK_THROWS_AS(train(EpilNet<float>::build({3, 0.125, 1}), data, cfg), ConfigError);
}
