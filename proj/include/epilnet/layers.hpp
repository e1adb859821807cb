#pragma once

// Forward/backward primitives for the fixed layer set of the network:
// 1D convolution, batch normalization, ReLU, max pooling, global average
// pooling, dense, softmax + cross-entropy. Every function is a pure function
// of its arguments except batch-norm training, which folds batch statistics
// into the running estimates held by its spec.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "epilnet/tensor.hpp"

namespace epilnet {

enum class Mode { train, eval };

/// floor((length + 2*padding - kernel) / stride) + 1; throws ShapeError if that is < 1.
std::size_t output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t padding);

template <typename T>
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::vector<T> weights;  // out x in x kernel
  std::vector<T> bias;     // out

  static ConvSpec zeros(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                        std::size_t padding) {
    return {in, out, kernel, stride, padding, std::vector<T>(out * in * kernel, T(0)), std::vector<T>(out, T(0))};
  }
  void validate() const;
};

template <typename T>
struct ConvGrads {
  SignalTensor<T> grad_x;
  std::vector<T> grad_weights;
  std::vector<T> grad_bias;
};

template <typename T>
SignalTensor<T> conv1d_forward(const SignalTensor<T>& x, const ConvSpec<T>& spec);

template <typename T>
ConvGrads<T> conv1d_backward(const SignalTensor<T>& x, const ConvSpec<T>& spec, const SignalTensor<T>& upstream);

template <typename T>
struct BatchNormSpec {
  std::size_t channels = 0;
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;  // unbiased estimate
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormSpec identity(std::size_t channels) {
    return {channels,
            std::vector<T>(channels, T(1)),
            std::vector<T>(channels, T(0)),
            std::vector<T>(channels, T(0)),
            std::vector<T>(channels, T(1))};
  }
  void validate() const;
};

template <typename T>
struct BatchNormGrads {
  SignalTensor<T> grad_x;
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;
};

/// Train mode normalizes with batch statistics (population variance) and
/// updates the running estimates; eval mode reads the running estimates only.
template <typename T>
SignalTensor<T> batchnorm1d(const SignalTensor<T>& x, BatchNormSpec<T>& spec, Mode mode);

template <typename T>
SignalTensor<T> batchnorm1d_eval(const SignalTensor<T>& x, const BatchNormSpec<T>& spec);

/// Batch statistics are recomputed from x in train mode; running stats are untouched.
template <typename T>
BatchNormGrads<T> batchnorm1d_backward(const SignalTensor<T>& x, const BatchNormSpec<T>& spec,
                                       const SignalTensor<T>& upstream, Mode mode);

template <typename T>
SignalTensor<T> relu(const SignalTensor<T>& x);

// Derivative at exactly 0 is 0.
template <typename T>
SignalTensor<T> relu_backward(const SignalTensor<T>& x, const SignalTensor<T>& upstream);

template <typename T>
struct PoolResult {
  SignalTensor<T> output;
  std::vector<std::uint32_t> argmax;  // input position per output element
};

/// Padding slots act as -infinity and are never selected; ties go to the lowest index.
template <typename T>
PoolResult<T> maxpool1d(const SignalTensor<T>& x, std::size_t kernel = 3, std::size_t stride = 2,
                        std::size_t padding = 1);

template <typename T>
SignalTensor<T> maxpool1d_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                                   const SignalTensor<T>& upstream);

template <typename T>
SignalTensor<T> global_avg_pool(const SignalTensor<T>& x);

template <typename T>
SignalTensor<T> global_avg_pool_backward(const Shape& input_shape, const SignalTensor<T>& upstream);

template <typename T>
struct DenseSpec {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::vector<T> weights;  // out x in
  std::vector<T> bias;

  static DenseSpec zeros(std::size_t in, std::size_t out) {
    return {in, out, std::vector<T>(in * out, T(0)), std::vector<T>(out, T(0))};
  }
  void validate() const;
};

template <typename T>
struct DenseGrads {
  SignalTensor<T> grad_x;
  std::vector<T> grad_weights;
  std::vector<T> grad_bias;
};

/// x is (batch, c, l) with c*l == in_features; the result is (batch, out_features, 1).
template <typename T>
SignalTensor<T> dense_forward(const SignalTensor<T>& x, const DenseSpec<T>& spec);

template <typename T>
DenseGrads<T> dense_backward(const SignalTensor<T>& x, const DenseSpec<T>& spec, const SignalTensor<T>& upstream);

template <typename T>
std::vector<T> softmax(std::span<const T> logits);

template <typename T>
struct CrossEntropy {
  T loss = T(0);
  std::vector<T> probabilities;
  std::vector<T> grad_logits;
};

/// Max-subtracted softmax, loss = -ln p[label], grad = p - onehot(label).
template <typename T>
CrossEntropy<T> softmax_cross_entropy(std::span<const T> logits, std::size_t label);

template <typename T>
struct BatchCrossEntropy {
  T mean_loss = T(0);
  SignalTensor<T> probabilities;  // (batch, classes, 1)
  SignalTensor<T> grad_logits;    // gradient of the mean loss
};

template <typename T>
BatchCrossEntropy<T> softmax_cross_entropy(const SignalTensor<T>& logits, std::span<const std::size_t> labels);

/// Index of the largest value, lowest index on ties.
template <typename T>
std::size_t argmax(std::span<const T> values);

}  // namespace epilnet
