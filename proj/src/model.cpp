#include "epilnet/model.hpp"

#include <cmath>
#include <random>

namespace epilnet {

std::array<std::size_t, 4> ModelConfig::stage_widths() const {
  std::array<std::size_t, 4> widths{};
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const auto scaled = static_cast<std::size_t>(std::lround(static_cast<double>(kStageWidths[i]) * width_multiplier));
    widths[i] = std::max<std::size_t>(scaled, 1);
  }
  return widths;
}

void ModelConfig::validate() const {
  if (class_count < 2) throw ConfigError("class count must be >= 2, got " + std::to_string(class_count));
  if (!(width_multiplier > 0.0) || !std::isfinite(width_multiplier))
    throw ConfigError("width multiplier must be a positive finite number");
}

std::size_t ManifestEntry::numel() const {
  std::size_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

template <typename T>
BasicBlock<T> BasicBlock<T>::make(std::size_t channels_in, std::size_t channels_out, std::size_t stride) {
  BasicBlock block;
  block.channels_in = channels_in;
  block.channels_out = channels_out;
  block.stride = stride;
  block.conv1 = ConvSpec<T>::zeros(channels_in, channels_out, 3, stride, 1);
  block.bn1 = BatchNormSpec<T>::identity(channels_out);
  block.conv2 = ConvSpec<T>::zeros(channels_out, channels_out, 3, 1, 1);
  block.bn2 = BatchNormSpec<T>::identity(channels_out);
  if (channels_in != channels_out || stride != 1) {
    block.projection = ConvSpec<T>::zeros(channels_in, channels_out, 1, stride, 0);
    block.projection_bn = BatchNormSpec<T>::identity(channels_out);
  }
  return block;
}

template <typename T>
EpilNet<T> EpilNet<T>::build(const ModelConfig& config) {
  config.validate();
  EpilNet model;
  model.config_ = config;
  const auto widths = config.stage_widths();

  model.stem = ConvSpec<T>::zeros(1, widths[0], 7, 2, 3);
  model.stem_bn = BatchNormSpec<T>::identity(widths[0]);
  std::size_t channels = widths[0];
  for (std::size_t s = 0; s < kStageRepeats.size(); ++s) {
    std::vector<BasicBlock<T>> stage;
    for (std::size_t b = 0; b < kStageRepeats[s]; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      stage.push_back(BasicBlock<T>::make(channels, widths[s], stride));
      channels = widths[s];
    }
    model.stages.push_back(std::move(stage));
  }
  model.hidden = DenseSpec<T>::zeros(channels, channels);
  model.head = DenseSpec<T>::zeros(channels, config.class_count);

  std::mt19937_64 rng(config.seed);
  model.for_each_tensor([&](const ManifestEntry& entry, std::span<T> values) {
    const bool is_weight = entry.name.ends_with(".weight");
    if (!is_weight) return;
    // fan_in = product of all but the leading (output) dimension
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < entry.shape.size(); ++d) fan_in *= entry.shape[d];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (T& v : values) v = static_cast<T>(normal(rng));
  });
  return model;
}

template <typename T>
std::vector<ManifestEntry> EpilNet<T>::manifest() const {
  std::vector<ManifestEntry> entries;
  for_each_tensor([&](const ManifestEntry& entry, std::span<const T>) { entries.push_back(entry); });
  return entries;
}

template <typename T>
std::size_t EpilNet<T>::blob_size() const {
  std::size_t n = 0;
  for_each_tensor([&](const ManifestEntry&, std::span<const T> values) { n += values.size(); });
  return n;
}

template <typename T>
std::size_t EpilNet<T>::trainable_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const ManifestEntry& entry, std::span<const T> values) {
    if (entry.trainable) n += values.size();
  });
  return n;
}

template <typename T>
std::vector<T> EpilNet<T>::flatten() const {
  std::vector<T> blob;
  blob.reserve(blob_size());
  for_each_tensor([&](const ManifestEntry&, std::span<const T> values) { blob.insert(blob.end(), values.begin(), values.end()); });
  return blob;
}

template <typename T>
void EpilNet<T>::load_flat(std::span<const T> blob) {
  const std::size_t expected = blob_size();
  if (blob.size() != expected) throw ShapeError("parameter blob", expected, blob.size());
  for_each_tensor([&](const ManifestEntry& entry, std::span<T> values) {
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(entry.offset), values.size(), values.begin());
  });
}

template <typename T>
template <typename U>
EpilNet<U> EpilNet<T>::cast() const {
  EpilNet<U> out = EpilNet<U>::build(config_);
  const auto blob = flatten();
  std::vector<U> converted(blob.begin(), blob.end());
  out.load_flat(converted);
  return out;
}

namespace {

template <typename T>
SignalTensor<T> add(const SignalTensor<T>& a, const SignalTensor<T>& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("residual add elements", a.size(), b.size());
  SignalTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
void accumulate(SignalTensor<T>& into, const SignalTensor<T>& g) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

template <typename T>
void check_input(const EpilNet<T>& model, const SignalTensor<T>& input) {
  (void)model;
  if (input.channels() != 1) throw ShapeError("input channels", 1, input.channels());
  if (input.length() != kWindowLength) throw ShapeError("input length", kWindowLength, input.length());
  if (input.batch() == 0) throw ShapeError("input batch (must be >= 1)", 1, 0);
}

// Copies parameter gradients into the flat blob at their manifest offsets.
template <typename T>
class GradWriter {
 public:
  GradWriter(std::vector<ManifestEntry> manifest, std::span<T> blob) : manifest_(std::move(manifest)), blob_(blob) {}

  void put(const std::string& name, std::span<const T> grad) {
    const auto& entry = find(name);
    if (entry.numel() != grad.size()) throw ShapeError("gradient for " + name, entry.numel(), grad.size());
    std::copy(grad.begin(), grad.end(), blob_.begin() + static_cast<std::ptrdiff_t>(entry.offset));
  }

 private:
  const ManifestEntry& find(const std::string& name) {
    // Backward visits tensors in reverse manifest order; scan from the cursor down.
    while (cursor_ > 0) {
      --cursor_;
      if (manifest_[cursor_].name == name) return manifest_[cursor_];
    }
    for (std::size_t i = manifest_.size(); i-- > 0;)
      if (manifest_[i].name == name) return manifest_[i];
    throw ConfigError("unknown manifest entry " + name);
  }

  std::vector<ManifestEntry> manifest_;
  std::span<T> blob_;
  std::size_t cursor_ = manifest_.size();
};

std::uint64_t mix_signs(std::uint64_t h, std::span<const float> v) {
  for (const float x : v) h = (h ^ static_cast<std::uint64_t>(x > 0.0f)) * 1099511628211ULL;
  return h;
}
std::uint64_t mix_signs(std::uint64_t h, std::span<const double> v) {
  for (const double x : v) h = (h ^ static_cast<std::uint64_t>(x > 0.0)) * 1099511628211ULL;
  return h;
}

}  // namespace

template <typename T>
SignalTensor<T> block_forward(const BasicBlock<T>& block, const SignalTensor<T>& in) {
  auto main = relu(batchnorm1d_eval(conv1d_forward(in, block.conv1), block.bn1));
  main = relu(batchnorm1d_eval(conv1d_forward(main, block.conv2), block.bn2));
  if (block.projection) return relu(add(main, batchnorm1d_eval(conv1d_forward(in, *block.projection), *block.projection_bn)));
  return relu(add(main, in));
}

template <typename T>
SignalTensor<T> block_forward_train(BasicBlock<T>& block, const SignalTensor<T>& in, BlockTape<T>& tape) {
  tape.input = in;
  tape.conv1_out = conv1d_forward(in, block.conv1);
  tape.bn1_out = batchnorm1d(tape.conv1_out, block.bn1, Mode::train);
  tape.relu1_out = relu(tape.bn1_out);
  tape.conv2_out = conv1d_forward(tape.relu1_out, block.conv2);
  tape.bn2_out = batchnorm1d(tape.conv2_out, block.bn2, Mode::train);
  const auto main = relu(tape.bn2_out);
  if (block.projection) {
    tape.projection_out = conv1d_forward(in, *block.projection);
    tape.sum = add(main, batchnorm1d(tape.projection_out, *block.projection_bn, Mode::train));
  } else {
    tape.sum = add(main, in);
  }
  return relu(tape.sum);
}

template <typename T>
BlockGrads<T> block_backward(const BasicBlock<T>& block, const BlockTape<T>& tape, const SignalTensor<T>& upstream) {
  BlockGrads<T> out;
  auto put = [&](const char* name, std::vector<T> grad) { out.params.emplace_back(name, std::move(grad)); };
  const auto d_sum = relu_backward(tape.sum, upstream);
  if (block.projection) {
    auto bn = batchnorm1d_backward(tape.projection_out, *block.projection_bn, d_sum, Mode::train);
    put("projection.bn.beta", std::move(bn.grad_beta));
    put("projection.bn.gamma", std::move(bn.grad_gamma));
    auto conv = conv1d_backward(tape.input, *block.projection, bn.grad_x);
    put("projection.conv.bias", std::move(conv.grad_bias));
    put("projection.conv.weight", std::move(conv.grad_weights));
    out.grad_x = std::move(conv.grad_x);
  } else {
    out.grad_x = d_sum;
  }
  const auto d_bn2_out = relu_backward(tape.bn2_out, d_sum);
  auto bn2 = batchnorm1d_backward(tape.conv2_out, block.bn2, d_bn2_out, Mode::train);
  put("bn2.beta", std::move(bn2.grad_beta));
  put("bn2.gamma", std::move(bn2.grad_gamma));
  auto conv2 = conv1d_backward(tape.relu1_out, block.conv2, bn2.grad_x);
  put("conv2.bias", std::move(conv2.grad_bias));
  put("conv2.weight", std::move(conv2.grad_weights));
  const auto d_bn1_out = relu_backward(tape.bn1_out, conv2.grad_x);
  auto bn1 = batchnorm1d_backward(tape.conv1_out, block.bn1, d_bn1_out, Mode::train);
  put("bn1.beta", std::move(bn1.grad_beta));
  put("bn1.gamma", std::move(bn1.grad_gamma));
  auto conv1 = conv1d_backward(tape.input, block.conv1, bn1.grad_x);
  put("conv1.bias", std::move(conv1.grad_bias));
  put("conv1.weight", std::move(conv1.grad_weights));
  accumulate(out.grad_x, conv1.grad_x);
  return out;
}

template <typename T>
std::uint64_t ForwardTape<T>::relu_signature() const {
  std::uint64_t h = 1469598103934665603ULL;
  h = mix_signs(h, stem_bn_out.values());
  for (const auto& stage : blocks)
    for (const auto& b : stage) {
      h = mix_signs(h, b.bn1_out.values());
      h = mix_signs(h, b.bn2_out.values());
      h = mix_signs(h, b.sum.values());
    }
  return mix_signs(h, hidden_out.values());
}

template <typename T>
SignalTensor<T> forward(const EpilNet<T>& model, const SignalTensor<T>& input, ForwardTrace* trace) {
  check_input(model, input);
  auto x = relu(batchnorm1d_eval(conv1d_forward(input, model.stem), model.stem_bn));
  if (trace) trace->lengths = {x.length()};
  x = maxpool1d(x, 3, 2, 1).output;
  if (trace) trace->lengths.push_back(x.length());
  for (const auto& stage : model.stages) {
    for (const auto& block : stage) x = block_forward(block, x);
    if (trace) trace->lengths.push_back(x.length());
  }
  x = global_avg_pool(x);
  if (trace) trace->lengths.push_back(x.length());
  x = relu(dense_forward(x, model.hidden));
  return dense_forward(x, model.head);
}

template <typename T>
SignalTensor<T> forward_train(EpilNet<T>& model, const SignalTensor<T>& input, ForwardTape<T>& tape) {
  check_input(model, input);
  tape.input = input;
  tape.stem_conv_out = conv1d_forward(input, model.stem);
  tape.stem_bn_out = batchnorm1d(tape.stem_conv_out, model.stem_bn, Mode::train);
  auto x = relu(tape.stem_bn_out);
  tape.pool_input_shape = x.shape();
  auto pooled = maxpool1d(x, 3, 2, 1);
  tape.pool_argmax = std::move(pooled.argmax);
  x = std::move(pooled.output);
  tape.blocks.assign(model.stages.size(), {});
  for (std::size_t s = 0; s < model.stages.size(); ++s) {
    tape.blocks[s].resize(model.stages[s].size());
    for (std::size_t b = 0; b < model.stages[s].size(); ++b) x = block_forward_train(model.stages[s][b], x, tape.blocks[s][b]);
  }
  tape.pooled_shape = x.shape();
  tape.features = global_avg_pool(x);
  tape.hidden_out = dense_forward(tape.features, model.hidden);
  tape.hidden_relu = relu(tape.hidden_out);
  return dense_forward(tape.hidden_relu, model.head);
}

template <typename T>
SignalTensor<T> forward(EpilNet<T>& model, const SignalTensor<T>& input, Mode mode) {
  if (mode == Mode::eval) return forward(static_cast<const EpilNet<T>&>(model), input);
  ForwardTape<T> tape;
  return forward_train(model, input, tape);
}

template <typename T>
void backward(const EpilNet<T>& model, const ForwardTape<T>& tape, const SignalTensor<T>& grad_logits,
              std::span<T> grad_blob) {
  if (grad_blob.size() != model.blob_size()) throw ShapeError("gradient blob", model.blob_size(), grad_blob.size());
  GradWriter<T> out(model.manifest(), grad_blob);

  const auto head = dense_backward(tape.hidden_relu, model.head, grad_logits);
  out.put("fc2.bias", head.grad_bias);
  out.put("fc2.weight", head.grad_weights);
  const auto d_hidden = relu_backward(tape.hidden_out, head.grad_x);
  const auto hidden = dense_backward(tape.features, model.hidden, d_hidden);
  out.put("fc1.bias", hidden.grad_bias);
  out.put("fc1.weight", hidden.grad_weights);
  auto d = global_avg_pool_backward(tape.pooled_shape, hidden.grad_x);

  for (std::size_t s = model.stages.size(); s-- > 0;) {
    for (std::size_t b = model.stages[s].size(); b-- > 0;) {
      const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      auto grads = block_backward(model.stages[s][b], tape.blocks[s][b], d);
      for (const auto& [name, grad] : grads.params) out.put(prefix + "." + name, grad);
      d = std::move(grads.grad_x);
    }
  }

  d = maxpool1d_backward(tape.pool_input_shape, tape.pool_argmax, d);
  d = relu_backward(tape.stem_bn_out, d);
  const auto bn = batchnorm1d_backward(tape.stem_conv_out, model.stem_bn, d, Mode::train);
  out.put("stem.bn.beta", bn.grad_beta);
  out.put("stem.bn.gamma", bn.grad_gamma);
  const auto conv = conv1d_backward(tape.input, model.stem, bn.grad_x);
  out.put("stem.conv.bias", conv.grad_bias);
  out.put("stem.conv.weight", conv.grad_weights);
}

template <typename T>
Prediction predict(const EpilNet<T>& model, std::span<const double> window, const NormStats& stats) {
  if (window.size() != kWindowLength) throw ShapeError("window length", kWindowLength, window.size());
  SignalTensor<T> input({1, 1, kWindowLength});
  for (std::size_t i = 0; i < kWindowLength; ++i) input[i] = static_cast<T>((window[i] - stats.mean) / stats.std);
  const auto logits = forward(model, input);
  std::vector<double> as_double(logits.values().begin(), logits.values().end());
  Prediction p;
  p.probabilities = softmax<double>(as_double);
  p.label_index = argmax<double>(p.probabilities);
  return p;
}

#define EPILNET_INSTANTIATE_MODEL(T)                                                                              \
  template struct BasicBlock<T>;                                                                                  \
  template class EpilNet<T>;                                                                                      \
  template struct ForwardTape<T>;                                                                                 \
  template SignalTensor<T> block_forward(const BasicBlock<T>&, const SignalTensor<T>&);                           \
  template SignalTensor<T> block_forward_train(BasicBlock<T>&, const SignalTensor<T>&, BlockTape<T>&);            \
  template BlockGrads<T> block_backward(const BasicBlock<T>&, const BlockTape<T>&, const SignalTensor<T>&);       \
  template SignalTensor<T> forward(const EpilNet<T>&, const SignalTensor<T>&, ForwardTrace*);                     \
  template SignalTensor<T> forward_train(EpilNet<T>&, const SignalTensor<T>&, ForwardTape<T>&);                   \
  template SignalTensor<T> forward(EpilNet<T>&, const SignalTensor<T>&, Mode);                                    \
  template void backward(const EpilNet<T>&, const ForwardTape<T>&, const SignalTensor<T>&, std::span<T>);         \
  template Prediction predict(const EpilNet<T>&, std::span<const double>, const NormStats&);

EPILNET_INSTANTIATE_MODEL(float)
EPILNET_INSTANTIATE_MODEL(double)

template EpilNet<double> EpilNet<float>::cast<double>() const;
template EpilNet<float> EpilNet<double>::cast<float>() const;

#undef EPILNET_INSTANTIATE_MODEL

}  // namespace epilnet
