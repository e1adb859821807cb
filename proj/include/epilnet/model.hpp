#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epilnet/layers.hpp"

namespace epilnet {

inline constexpr std::size_t kWindowLength = 178;
inline constexpr std::array<std::size_t, 4> kStageRepeats{3, 3, 4, 4};
inline constexpr std::array<std::size_t, 4> kStageWidths{64, 128, 256, 512};

struct ModelConfig {
  std::size_t class_count = 5;
  double width_multiplier = 1.0;
  std::uint64_t seed = 42;

  /// Stage widths after applying the multiplier (rounded, at least 1).
  std::array<std::size_t, 4> stage_widths() const;
  void validate() const;
};

/// Scalar normalization applied to every window before the network.
struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Two (conv3 -> BN -> ReLU) stages, skip addition, final ReLU. The first block
/// of stages 2-4 carries stride 2 and a 1x1 projection + BN on the skip path.
template <typename T>
struct BasicBlock {
  std::size_t channels_in = 0;
  std::size_t channels_out = 0;
  std::size_t stride = 1;
  ConvSpec<T> conv1;
  BatchNormSpec<T> bn1;
  ConvSpec<T> conv2;
  BatchNormSpec<T> bn2;
  std::optional<ConvSpec<T>> projection;
  std::optional<BatchNormSpec<T>> projection_bn;

  static BasicBlock make(std::size_t channels_in, std::size_t channels_out, std::size_t stride);
};

struct ManifestEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // in elements, within the flattened blob
  bool trainable = true;   // false for batch-norm running statistics

  std::size_t numel() const;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

template <typename T>
class EpilNet {
 public:
  /// He-normal conv/dense weights from `config.seed`, gamma 1, beta 0, zero biases.
  static EpilNet build(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t class_count() const noexcept { return config_.class_count; }

  /// Ordered (name, shape, offset) for every tensor, running statistics included.
  std::vector<ManifestEntry> manifest() const;
  std::size_t blob_size() const;
  std::size_t trainable_count() const;

  std::vector<T> flatten() const;
  void load_flat(std::span<const T> blob);

  /// f(const ManifestEntry&, std::span<T>) over every tensor in manifest order.
  template <typename F>
  void for_each_tensor(F&& f);
  template <typename F>
  void for_each_tensor(F&& f) const;

  template <typename U>
  EpilNet<U> cast() const;

  ConvSpec<T> stem;
  BatchNormSpec<T> stem_bn;
  std::vector<std::vector<BasicBlock<T>>> stages;
  DenseSpec<T> hidden;
  DenseSpec<T> head;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F&& f);

  ModelConfig config_;
  template <typename U>
  friend class EpilNet;
};

/// Temporal length after the stem conv, the pool, each stage and the global pool.
struct ForwardTrace {
  std::vector<std::size_t> lengths;
};

template <typename T>
struct BlockTape {
  SignalTensor<T> input, conv1_out, bn1_out, relu1_out, conv2_out, bn2_out, sum, projection_out;
};

/// Activations kept by a training forward pass for the backward pass.
template <typename T>
struct ForwardTape {
  SignalTensor<T> input, stem_conv_out, stem_bn_out;
  Shape pool_input_shape;
  std::vector<std::uint32_t> pool_argmax;
  std::vector<std::vector<BlockTape<T>>> blocks;
  Shape pooled_shape;
  SignalTensor<T> features, hidden_out, hidden_relu;

  /// Hash of every ReLU on/off decision; differs when an input crosses a kink.
  std::uint64_t relu_signature() const;
};

template <typename T>
struct BlockGrads {
  SignalTensor<T> grad_x;
  // (name relative to the block, e.g. "conv1.weight", gradient) in reverse manifest order
  std::vector<std::pair<std::string, std::vector<T>>> params;
};

template <typename T>
SignalTensor<T> block_forward(const BasicBlock<T>& block, const SignalTensor<T>& input);

template <typename T>
SignalTensor<T> block_forward_train(BasicBlock<T>& block, const SignalTensor<T>& input, BlockTape<T>& tape);

template <typename T>
BlockGrads<T> block_backward(const BasicBlock<T>& block, const BlockTape<T>& tape, const SignalTensor<T>& upstream);

/// Eval-mode forward (running statistics); `input` is (batch, 1, 178). Returns (batch, C, 1) logits.
template <typename T>
SignalTensor<T> forward(const EpilNet<T>& model, const SignalTensor<T>& input, ForwardTrace* trace = nullptr);

/// Train-mode forward: batch statistics, running statistics updated, activations recorded.
template <typename T>
SignalTensor<T> forward_train(EpilNet<T>& model, const SignalTensor<T>& input, ForwardTape<T>& tape);

/// Dispatches on mode; train mode discards the tape.
template <typename T>
SignalTensor<T> forward(EpilNet<T>& model, const SignalTensor<T>& input, Mode mode);

/// Gradient of the loss w.r.t. every trainable tensor, written into `grad_blob`
/// at manifest offsets (running-statistic slots are left untouched).
template <typename T>
void backward(const EpilNet<T>& model, const ForwardTape<T>& tape, const SignalTensor<T>& grad_logits,
              std::span<T> grad_blob);

struct Prediction {
  std::size_t label_index = 0;
  std::vector<double> probabilities;
};

/// Normalizes one 178-sample window with `stats`, runs eval forward, softmax + argmax (ties to lowest index).
template <typename T>
Prediction predict(const EpilNet<T>& model, std::span<const double> window, const NormStats& stats);

template <typename T>
template <typename F>
void EpilNet<T>::for_each_tensor(F&& f) {
  visit(*this, std::forward<F>(f));
}

template <typename T>
template <typename F>
void EpilNet<T>::for_each_tensor(F&& f) const {
  visit(*this, std::forward<F>(f));
}

template <typename T>
template <typename Self, typename F>
void EpilNet<T>::visit(Self& self, F&& f) {
  std::size_t offset = 0;
  auto emit = [&](std::string name, std::vector<std::size_t> shape, auto& storage, bool trainable) {
    ManifestEntry entry{std::move(name), std::move(shape), offset, trainable};
    offset += storage.size();
    f(static_cast<const ManifestEntry&>(entry), std::span(storage));
  };
  auto conv = [&](const std::string& prefix, auto& spec) {
    emit(prefix + ".weight", {spec.out_channels, spec.in_channels, spec.kernel}, spec.weights, true);
    emit(prefix + ".bias", {spec.out_channels}, spec.bias, true);
  };
  auto bn = [&](const std::string& prefix, auto& spec) {
    emit(prefix + ".gamma", {spec.channels}, spec.gamma, true);
    emit(prefix + ".beta", {spec.channels}, spec.beta, true);
    emit(prefix + ".running_mean", {spec.channels}, spec.running_mean, false);
    emit(prefix + ".running_var", {spec.channels}, spec.running_var, false);
  };
  auto dense = [&](const std::string& prefix, auto& spec) {
    emit(prefix + ".weight", {spec.out_features, spec.in_features}, spec.weights, true);
    emit(prefix + ".bias", {spec.out_features}, spec.bias, true);
  };
  conv("stem.conv", self.stem);
  bn("stem.bn", self.stem_bn);
  for (std::size_t s = 0; s < self.stages.size(); ++s) {
    for (std::size_t b = 0; b < self.stages[s].size(); ++b) {
      auto& block = self.stages[s][b];
      const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      conv(prefix + ".conv1", block.conv1);
      bn(prefix + ".bn1", block.bn1);
      conv(prefix + ".conv2", block.conv2);
      bn(prefix + ".bn2", block.bn2);
      if (block.projection) {
        conv(prefix + ".projection.conv", *block.projection);
        bn(prefix + ".projection.bn", *block.projection_bn);
      }
    }
  }
  dense("fc1", self.hidden);
  dense("fc2", self.head);
}

}  // namespace epilnet
