#include "epilnet/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <numeric>

namespace epilnet {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

void require(const char* what, std::size_t expected, std::size_t actual) {
  if (expected != actual) throw ShapeError(what, expected, actual);
}

// cols[(ci*K + k), b*Lout + t] = x[b, ci, t*stride + k - padding], zero outside.
template <typename T>
RowMatrix<T> im2col(const SignalTensor<T>& x, const ConvSpec<T>& spec, std::size_t out_len) {
  const std::size_t batch = x.batch();
  const std::size_t len = x.length();
  const std::size_t k_size = spec.kernel;
  RowMatrix<T> cols = RowMatrix<T>::Zero(static_cast<Eigen::Index>(spec.in_channels * k_size),
                                         static_cast<Eigen::Index>(batch * out_len));
  for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
    for (std::size_t k = 0; k < k_size; ++k) {
      T* dst = cols.data() + (ci * k_size + k) * batch * out_len;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = x.row(b, ci).data();
        for (std::size_t t = 0; t < out_len; ++t) {
          const auto pos = static_cast<std::ptrdiff_t>(t * spec.stride + k) - static_cast<std::ptrdiff_t>(spec.padding);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) dst[b * out_len + t] = src[pos];
        }
      }
    }
  }
  return cols;
}

template <typename T>
void check_conv_input(const SignalTensor<T>& x, const ConvSpec<T>& spec) {
  spec.validate();
  require("conv1d input channels", spec.in_channels, x.channels());
}

}  // namespace

std::size_t output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  if (kernel == 0) throw ConfigError("kernel must be >= 1");
  const std::size_t padded = length + 2 * padding;
  if (padded < kernel) throw ShapeError("padded length (must cover kernel)", kernel, padded);
  return (padded - kernel) / stride + 1;
}

template <typename T>
void ConvSpec<T>::validate() const {
  if (kernel < 1) throw ConfigError("conv kernel must be >= 1");
  if (stride < 1) throw ConfigError("conv stride must be >= 1");
  require("conv weights", out_channels * in_channels * kernel, weights.size());
  require("conv bias", out_channels, bias.size());
}

template <typename T>
SignalTensor<T> conv1d_forward(const SignalTensor<T>& x, const ConvSpec<T>& spec) {
  check_conv_input(x, spec);
  const std::size_t out_len = output_length(x.length(), spec.kernel, spec.stride, spec.padding);
  const std::size_t batch = x.batch();
  const RowMatrix<T> cols = im2col(x, spec, out_len);
  ConstMatrixMap<T> w(spec.weights.data(), static_cast<Eigen::Index>(spec.out_channels),
                      static_cast<Eigen::Index>(spec.in_channels * spec.kernel));
  const RowMatrix<T> y = w * cols;  // out x (batch * out_len)

  SignalTensor<T> out({batch, spec.out_channels, out_len});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < spec.out_channels; ++co) {
      const T* src = y.data() + co * batch * out_len + b * out_len;
      T* dst = out.row(b, co).data();
      const T bias = spec.bias[co];
      for (std::size_t t = 0; t < out_len; ++t) dst[t] = src[t] + bias;
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv1d_backward(const SignalTensor<T>& x, const ConvSpec<T>& spec, const SignalTensor<T>& upstream) {
  check_conv_input(x, spec);
  const std::size_t out_len = output_length(x.length(), spec.kernel, spec.stride, spec.padding);
  const std::size_t batch = x.batch();
  require("conv1d upstream batch", batch, upstream.batch());
  require("conv1d upstream channels", spec.out_channels, upstream.channels());
  require("conv1d upstream length", out_len, upstream.length());

  RowMatrix<T> dy(static_cast<Eigen::Index>(spec.out_channels), static_cast<Eigen::Index>(batch * out_len));
  for (std::size_t co = 0; co < spec.out_channels; ++co) {
    for (std::size_t b = 0; b < batch; ++b) {
      const auto src = upstream.row(b, co);
      std::copy(src.begin(), src.end(), dy.data() + co * batch * out_len + b * out_len);
    }
  }

  const RowMatrix<T> cols = im2col(x, spec, out_len);
  const auto rows = static_cast<Eigen::Index>(spec.out_channels);
  const auto inner = static_cast<Eigen::Index>(spec.in_channels * spec.kernel);
  ConstMatrixMap<T> w(spec.weights.data(), rows, inner);

  ConvGrads<T> grads{SignalTensor<T>(x.shape()), std::vector<T>(spec.weights.size()), std::vector<T>(spec.out_channels)};
  MatrixMap<T> gw(grads.grad_weights.data(), rows, inner);
  gw.noalias() = dy * cols.transpose();
  for (std::size_t co = 0; co < spec.out_channels; ++co) grads.grad_bias[co] = dy.row(static_cast<Eigen::Index>(co)).sum();

  const RowMatrix<T> dcols = w.transpose() * dy;
  const std::size_t len = x.length();
  for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
    for (std::size_t k = 0; k < spec.kernel; ++k) {
      const T* src = dcols.data() + (ci * spec.kernel + k) * batch * out_len;
      for (std::size_t b = 0; b < batch; ++b) {
        T* dst = grads.grad_x.row(b, ci).data();
        for (std::size_t t = 0; t < out_len; ++t) {
          const auto pos = static_cast<std::ptrdiff_t>(t * spec.stride + k) - static_cast<std::ptrdiff_t>(spec.padding);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) dst[pos] += src[b * out_len + t];
        }
      }
    }
  }
  return grads;
}

template <typename T>
void BatchNormSpec<T>::validate() const {
  require("batchnorm gamma", channels, gamma.size());
  require("batchnorm beta", channels, beta.size());
  require("batchnorm running_mean", channels, running_mean.size());
  require("batchnorm running_var", channels, running_var.size());
  if (!(eps > 0.0)) throw ConfigError("batchnorm eps must be > 0");
  if (!(momentum > 0.0 && momentum < 1.0)) throw ConfigError("batchnorm momentum must lie in (0, 1)");
}

namespace {

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;  // population
};

template <typename T>
ChannelStats batch_stats(const SignalTensor<T>& x) {
  const std::size_t count = x.batch() * x.length();
  if (count < 2) throw DegenerateVarianceError("batchnorm train mode needs >= 2 elements per channel, got " + std::to_string(count));
  ChannelStats stats{std::vector<double>(x.channels(), 0.0), std::vector<double>(x.channels(), 0.0)};
  for (std::size_t c = 0; c < x.channels(); ++c) {
    double sum = 0.0;
    for (std::size_t b = 0; b < x.batch(); ++b)
      for (const T v : x.row(b, c)) sum += v;
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t b = 0; b < x.batch(); ++b)
      for (const T v : x.row(b, c)) sq += (v - mean) * (v - mean);
    stats.mean[c] = mean;
    stats.var[c] = sq / static_cast<double>(count);
  }
  return stats;
}

template <typename T>
SignalTensor<T> normalize_affine(const SignalTensor<T>& x, const BatchNormSpec<T>& spec, std::span<const double> mean,
                                 std::span<const double> var) {
  SignalTensor<T> out(x.shape());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const double inv_std = 1.0 / std::sqrt(var[c] + spec.eps);
    const double scale = spec.gamma[c] * inv_std;
    const double shift = spec.beta[c] - mean[c] * scale;
    for (std::size_t b = 0; b < x.batch(); ++b) {
      const auto src = x.row(b, c);
      auto dst = out.row(b, c);
      for (std::size_t t = 0; t < src.size(); ++t) dst[t] = static_cast<T>(src[t] * scale + shift);
    }
  }
  return out;
}

}  // namespace

template <typename T>
SignalTensor<T> batchnorm1d(const SignalTensor<T>& x, BatchNormSpec<T>& spec, Mode mode) {
  if (mode == Mode::eval) return batchnorm1d_eval(x, spec);
  spec.validate();
  require("batchnorm input channels", spec.channels, x.channels());
  const ChannelStats stats = batch_stats(x);
  const double count = static_cast<double>(x.batch() * x.length());
  for (std::size_t c = 0; c < spec.channels; ++c) {
    const double unbiased = stats.var[c] * count / (count - 1.0);
    spec.running_mean[c] = static_cast<T>((1.0 - spec.momentum) * spec.running_mean[c] + spec.momentum * stats.mean[c]);
    spec.running_var[c] = static_cast<T>((1.0 - spec.momentum) * spec.running_var[c] + spec.momentum * unbiased);
  }
  return normalize_affine(x, spec, stats.mean, stats.var);
}

template <typename T>
SignalTensor<T> batchnorm1d_eval(const SignalTensor<T>& x, const BatchNormSpec<T>& spec) {
  spec.validate();
  require("batchnorm input channels", spec.channels, x.channels());
  std::vector<double> mean(spec.running_mean.begin(), spec.running_mean.end());
  std::vector<double> var(spec.running_var.begin(), spec.running_var.end());
  return normalize_affine(x, spec, mean, var);
}

template <typename T>
BatchNormGrads<T> batchnorm1d_backward(const SignalTensor<T>& x, const BatchNormSpec<T>& spec,
                                       const SignalTensor<T>& upstream, Mode mode) {
  spec.validate();
  require("batchnorm input channels", spec.channels, x.channels());
  if (!(upstream.shape() == x.shape())) throw ShapeError("batchnorm upstream elements", x.size(), upstream.size());

  BatchNormGrads<T> grads{SignalTensor<T>(x.shape()), std::vector<T>(spec.channels), std::vector<T>(spec.channels)};
  ChannelStats stats;
  if (mode == Mode::train) {
    stats = batch_stats(x);
  } else {
    stats.mean.assign(spec.running_mean.begin(), spec.running_mean.end());
    stats.var.assign(spec.running_var.begin(), spec.running_var.end());
  }
  const double count = static_cast<double>(x.batch() * x.length());

  for (std::size_t c = 0; c < spec.channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(stats.var[c] + spec.eps);
    const double mean = stats.mean[c];
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < x.batch(); ++b) {
      const auto xs = x.row(b, c);
      const auto dys = upstream.row(b, c);
      for (std::size_t t = 0; t < xs.size(); ++t) {
        sum_dy += dys[t];
        sum_dy_xhat += dys[t] * (xs[t] - mean) * inv_std;
      }
    }
    grads.grad_gamma[c] = static_cast<T>(sum_dy_xhat);
    grads.grad_beta[c] = static_cast<T>(sum_dy);
    const double gamma = spec.gamma[c];
    for (std::size_t b = 0; b < x.batch(); ++b) {
      const auto xs = x.row(b, c);
      const auto dys = upstream.row(b, c);
      auto dxs = grads.grad_x.row(b, c);
      for (std::size_t t = 0; t < xs.size(); ++t) {
        if (mode == Mode::train) {
          const double xhat = (xs[t] - mean) * inv_std;
          dxs[t] = static_cast<T>(gamma * inv_std / count * (count * dys[t] - sum_dy - xhat * sum_dy_xhat));
        } else {
          dxs[t] = static_cast<T>(gamma * inv_std * dys[t]);
        }
      }
    }
  }
  return grads;
}

template <typename T>
SignalTensor<T> relu(const SignalTensor<T>& x) {
  SignalTensor<T> out(x.shape());
  const auto src = x.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  return out;
}

template <typename T>
SignalTensor<T> relu_backward(const SignalTensor<T>& x, const SignalTensor<T>& upstream) {
  if (!(upstream.shape() == x.shape())) throw ShapeError("relu upstream elements", x.size(), upstream.size());
  SignalTensor<T> out(x.shape());
  const auto src = x.values();
  const auto dy = upstream.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? dy[i] : T(0);
  return out;
}

template <typename T>
PoolResult<T> maxpool1d(const SignalTensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (x.length() == 0) throw ShapeError("maxpool input length (must be >= 1)", 1, 0);
  if (padding >= kernel) throw ConfigError("maxpool padding must be smaller than the kernel");
  const std::size_t out_len = output_length(x.length(), kernel, stride, padding);
  PoolResult<T> result{SignalTensor<T>({x.batch(), x.channels(), out_len}), std::vector<std::uint32_t>(x.batch() * x.channels() * out_len)};
  const auto len = static_cast<std::ptrdiff_t>(x.length());
  std::size_t slot = 0;
  for (std::size_t b = 0; b < x.batch(); ++b) {
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const auto src = x.row(b, c);
      auto dst = result.output.row(b, c);
      for (std::size_t t = 0; t < out_len; ++t, ++slot) {
        const auto start = static_cast<std::ptrdiff_t>(t * stride) - static_cast<std::ptrdiff_t>(padding);
        T best = -std::numeric_limits<T>::infinity();
        std::ptrdiff_t best_pos = -1;
        for (std::ptrdiff_t pos = std::max<std::ptrdiff_t>(start, 0);
             pos < std::min<std::ptrdiff_t>(start + static_cast<std::ptrdiff_t>(kernel), len); ++pos) {
          if (best_pos < 0 || src[pos] > best) {
            best = src[pos];
            best_pos = pos;
          }
        }
        dst[t] = best;
        result.argmax[slot] = static_cast<std::uint32_t>(best_pos);
      }
    }
  }
  return result;
}

template <typename T>
SignalTensor<T> maxpool1d_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                                   const SignalTensor<T>& upstream) {
  require("maxpool upstream batch", input_shape.batch, upstream.batch());
  require("maxpool upstream channels", input_shape.channels, upstream.channels());
  require("maxpool argmax entries", upstream.size(), argmax.size());
  SignalTensor<T> grad(input_shape);
  std::size_t slot = 0;
  for (std::size_t b = 0; b < upstream.batch(); ++b) {
    for (std::size_t c = 0; c < upstream.channels(); ++c) {
      const auto dy = upstream.row(b, c);
      auto dx = grad.row(b, c);
      for (std::size_t t = 0; t < dy.size(); ++t, ++slot) dx[argmax[slot]] += dy[t];
    }
  }
  return grad;
}

template <typename T>
SignalTensor<T> global_avg_pool(const SignalTensor<T>& x) {
  if (x.length() == 0) throw ShapeError("global_avg_pool input length (must be >= 1)", 1, 0);
  SignalTensor<T> out({x.batch(), x.channels(), 1});
  for (std::size_t b = 0; b < x.batch(); ++b) {
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const auto src = x.row(b, c);
      double sum = 0.0;
      for (const T v : src) sum += v;
      out.at(b, c, 0) = static_cast<T>(sum / static_cast<double>(src.size()));
    }
  }
  return out;
}

template <typename T>
SignalTensor<T> global_avg_pool_backward(const Shape& input_shape, const SignalTensor<T>& upstream) {
  require("global_avg_pool upstream batch", input_shape.batch, upstream.batch());
  require("global_avg_pool upstream channels", input_shape.channels, upstream.channels());
  require("global_avg_pool upstream length", 1, upstream.length());
  SignalTensor<T> grad(input_shape);
  const T inv = T(1) / static_cast<T>(input_shape.length);
  for (std::size_t b = 0; b < input_shape.batch; ++b)
    for (std::size_t c = 0; c < input_shape.channels; ++c) {
      const T g = upstream.at(b, c, 0) * inv;
      for (T& v : grad.row(b, c)) v = g;
    }
  return grad;
}

template <typename T>
void DenseSpec<T>::validate() const {
  require("dense weights", out_features * in_features, weights.size());
  require("dense bias", out_features, bias.size());
}

template <typename T>
SignalTensor<T> dense_forward(const SignalTensor<T>& x, const DenseSpec<T>& spec) {
  spec.validate();
  require("dense input features", spec.in_features, x.channels() * x.length());
  const auto batch = static_cast<Eigen::Index>(x.batch());
  ConstMatrixMap<T> in(x.data(), batch, static_cast<Eigen::Index>(spec.in_features));
  ConstMatrixMap<T> w(spec.weights.data(), static_cast<Eigen::Index>(spec.out_features),
                      static_cast<Eigen::Index>(spec.in_features));
  SignalTensor<T> out({x.batch(), spec.out_features, 1});
  MatrixMap<T> y(out.data(), batch, static_cast<Eigen::Index>(spec.out_features));
  y.noalias() = in * w.transpose();
  for (Eigen::Index b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < spec.out_features; ++o) y(b, static_cast<Eigen::Index>(o)) += spec.bias[o];
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const SignalTensor<T>& x, const DenseSpec<T>& spec, const SignalTensor<T>& upstream) {
  spec.validate();
  require("dense input features", spec.in_features, x.channels() * x.length());
  require("dense upstream batch", x.batch(), upstream.batch());
  require("dense upstream features", spec.out_features, upstream.channels() * upstream.length());
  const auto batch = static_cast<Eigen::Index>(x.batch());
  const auto in_f = static_cast<Eigen::Index>(spec.in_features);
  const auto out_f = static_cast<Eigen::Index>(spec.out_features);
  ConstMatrixMap<T> in(x.data(), batch, in_f);
  ConstMatrixMap<T> w(spec.weights.data(), out_f, in_f);
  ConstMatrixMap<T> dy(upstream.data(), batch, out_f);

  DenseGrads<T> grads{SignalTensor<T>(x.shape()), std::vector<T>(spec.weights.size()), std::vector<T>(spec.out_features)};
  MatrixMap<T> gw(grads.grad_weights.data(), out_f, in_f);
  gw.noalias() = dy.transpose() * in;
  for (Eigen::Index o = 0; o < out_f; ++o) grads.grad_bias[static_cast<std::size_t>(o)] = dy.col(o).sum();
  MatrixMap<T> gx(grads.grad_x.data(), batch, in_f);
  gx.noalias() = dy * w;
  return grads;
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.size());
  if (logits.empty()) return p;
  const T peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double e = std::exp(static_cast<double>(logits[i] - peak));
    p[i] = static_cast<T>(e);
    sum += e;
  }
  for (T& v : p) v = static_cast<T>(v / sum);
  return p;
}

template <typename T>
CrossEntropy<T> softmax_cross_entropy(std::span<const T> logits, std::size_t label) {
  if (logits.size() < 2) throw ShapeError("softmax classes (must be >= 2)", 2, logits.size());
  if (label >= logits.size()) throw ShapeError("label index (must be < classes)", logits.size() - 1, label);
  const T peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (const T v : logits) sum += std::exp(static_cast<double>(v - peak));
  const double log_sum = std::log(sum);

  CrossEntropy<T> out;
  out.probabilities.resize(logits.size());
  out.grad_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = std::exp(static_cast<double>(logits[i] - peak) - log_sum);
    out.probabilities[i] = static_cast<T>(p);
    out.grad_logits[i] = static_cast<T>(p - (i == label ? 1.0 : 0.0));
  }
  out.loss = static_cast<T>(log_sum - static_cast<double>(logits[label] - peak));
  return out;
}

template <typename T>
BatchCrossEntropy<T> softmax_cross_entropy(const SignalTensor<T>& logits, std::span<const std::size_t> labels) {
  require("cross-entropy labels", logits.batch(), labels.size());
  const std::size_t classes = logits.channels() * logits.length();
  BatchCrossEntropy<T> out{T(0), SignalTensor<T>({logits.batch(), classes, 1}), SignalTensor<T>({logits.batch(), classes, 1})};
  double total = 0.0;
  const T scale = T(1) / static_cast<T>(logits.batch());
  for (std::size_t b = 0; b < logits.batch(); ++b) {
    std::span<const T> row(logits.data() + b * classes, classes);
    const auto ce = softmax_cross_entropy<T>(row, labels[b]);
    total += ce.loss;
    for (std::size_t c = 0; c < classes; ++c) {
      out.probabilities.at(b, c, 0) = ce.probabilities[c];
      out.grad_logits.at(b, c, 0) = ce.grad_logits[c] * scale;
    }
  }
  out.mean_loss = static_cast<T>(total / static_cast<double>(logits.batch()));
  return out;
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

#define EPILNET_INSTANTIATE_LAYERS(T)                                                                          \
  template struct ConvSpec<T>;                                                                                 \
  template struct BatchNormSpec<T>;                                                                            \
  template struct DenseSpec<T>;                                                                                \
  template SignalTensor<T> conv1d_forward(const SignalTensor<T>&, const ConvSpec<T>&);                         \
  template ConvGrads<T> conv1d_backward(const SignalTensor<T>&, const ConvSpec<T>&, const SignalTensor<T>&);   \
  template SignalTensor<T> batchnorm1d(const SignalTensor<T>&, BatchNormSpec<T>&, Mode);                       \
  template SignalTensor<T> batchnorm1d_eval(const SignalTensor<T>&, const BatchNormSpec<T>&);                  \
  template BatchNormGrads<T> batchnorm1d_backward(const SignalTensor<T>&, const BatchNormSpec<T>&,             \
                                                  const SignalTensor<T>&, Mode);                               \
  template SignalTensor<T> relu(const SignalTensor<T>&);                                                       \
  template SignalTensor<T> relu_backward(const SignalTensor<T>&, const SignalTensor<T>&);                      \
  template PoolResult<T> maxpool1d(const SignalTensor<T>&, std::size_t, std::size_t, std::size_t);             \
  template SignalTensor<T> maxpool1d_backward(const Shape&, std::span<const std::uint32_t>,                    \
                                              const SignalTensor<T>&);                                         \
  template SignalTensor<T> global_avg_pool(const SignalTensor<T>&);                                            \
  template SignalTensor<T> global_avg_pool_backward(const Shape&, const SignalTensor<T>&);                     \
  template SignalTensor<T> dense_forward(const SignalTensor<T>&, const DenseSpec<T>&);                         \
  template DenseGrads<T> dense_backward(const SignalTensor<T>&, const DenseSpec<T>&, const SignalTensor<T>&);  \
  template std::vector<T> softmax(std::span<const T>);                                                         \
  template CrossEntropy<T> softmax_cross_entropy(std::span<const T>, std::size_t);                             \
  template BatchCrossEntropy<T> softmax_cross_entropy(const SignalTensor<T>&, std::span<const std::size_t>);   \
  template std::size_t argmax(std::span<const T>);

EPILNET_INSTANTIATE_LAYERS(float)
EPILNET_INSTANTIATE_LAYERS(double)

#undef EPILNET_INSTANTIATE_LAYERS

}  // namespace epilnet
