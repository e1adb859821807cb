#include <cmath>
#include <numeric>

#include "doctest.h"
#include "epilnet/gradcheck.hpp"
#include "epilnet/layers.hpp"
#include "epilnet/optim.hpp"
#include "support.hpp"

using namespace epilnet;
using epilnet::testing::projection;
using epilnet::testing::random_tensor;
using epilnet::testing::random_vector;

namespace {

ConvSpec<double> random_conv(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p,
                             std::uint64_t seed) {
  auto spec = ConvSpec<double>::zeros(in, out, k, s, p);
  spec.weights = random_vector<double>(spec.weights.size(), seed);
  spec.bias = random_vector<double>(out, seed + 1);
  return spec;
}

}  // namespace

TEST_CASE("output length follows floor((L + 2p - k) / s) + 1") {
  CHECK(output_length(178, 7, 2, 3) == 89);
  CHECK(output_length(45, 3, 1, 1) == 45);
  CHECK(output_length(89, 3, 2, 1) == 45);
  CHECK(output_length(45, 3, 2, 1) == 23);
  CHECK(output_length(23, 3, 2, 1) == 12);
  CHECK(output_length(12, 3, 2, 1) == 6);
  CHECK_THROWS_AS(output_length(2, 7, 1, 0), ShapeError);

  // property: brute-force count of window start positions
  for (std::size_t len = 1; len < 40; ++len)
    for (std::size_t k = 1; k <= 7; ++k)
      for (std::size_t s = 1; s <= 3; ++s)
        for (std::size_t p = 0; p <= 3; ++p) {
          if (len + 2 * p < k) continue;
          std::size_t windows = 0;
          for (std::size_t start = 0; start + k <= len + 2 * p; start += s) ++windows;
          REQUIRE(output_length(len, k, s, p) == windows);
        }
}

TEST_CASE("conv1d forward") {
  SUBCASE("stem geometry") {
    auto spec = ConvSpec<float>::zeros(1, 4, 7, 2, 3);
    const auto y = conv1d_forward(random_tensor<float>({2, 1, 178}, 1), spec);
    CHECK(y.shape() == Shape{2, 4, 89});
  }
  SUBCASE("same-length 3-tap") {
    auto spec = ConvSpec<float>::zeros(3, 3, 3, 1, 1);
    CHECK(conv1d_forward(random_tensor<float>({1, 3, 45}, 2), spec).length() == 45);
  }
  SUBCASE("zero kernel gives zero output") {
    auto spec = ConvSpec<double>::zeros(1, 1, 5, 1, 2);
    const auto y = conv1d_forward(random_tensor<double>({3, 1, 20}, 3), spec);
    for (const double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("matches direct summation with zero padding") {
    const auto spec = random_conv(2, 3, 3, 2, 1, 11);
    const auto x = random_tensor<double>({2, 2, 9}, 12);
    const auto y = conv1d_forward(x, spec);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t co = 0; co < 3; ++co)
        for (std::size_t t = 0; t < y.length(); ++t) {
          double ref = spec.bias[co];
          for (std::size_t ci = 0; ci < 2; ++ci)
            for (std::size_t k = 0; k < 3; ++k) {
              const long pos = static_cast<long>(t * 2 + k) - 1;
              if (pos >= 0 && pos < 9) ref += spec.weights[(co * 2 + ci) * 3 + k] * x.at(b, ci, static_cast<std::size_t>(pos));
            }
          CHECK(y.at(b, co, t) == doctest::Approx(ref).epsilon(1e-12));
        }
  }
  SUBCASE("channel mismatch names expected and actual") {
    auto spec = ConvSpec<float>::zeros(2, 4, 3, 1, 1);
    try {
      conv1d_forward(random_tensor<float>({1, 3, 10}, 4), spec);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(e.expected() == 2);
      CHECK(e.actual() == 3);
    }
  }
}

TEST_CASE("conv1d backward") {
  SUBCASE("zero upstream gives zero gradients") {
    const auto spec = random_conv(2, 3, 3, 1, 1, 5);
    const auto x = random_tensor<double>({2, 2, 9}, 6);
    const auto g = conv1d_backward(x, spec, SignalTensor<double>({2, 3, 9}));
    for (const double v : g.grad_x.values()) CHECK(v == 0.0);
    for (const double v : g.grad_weights) CHECK(v == 0.0);
    for (const double v : g.grad_bias) CHECK(v == 0.0);
  }
  SUBCASE("1x1 conv is a scaling") {
    auto spec = ConvSpec<double>::zeros(1, 1, 1, 1, 0);
    spec.weights = {2.5};
    const auto x = random_tensor<double>({2, 1, 7}, 7);
    const auto up = random_tensor<double>({2, 1, 7}, 8);
    const auto g = conv1d_backward(x, spec, up);
    for (std::size_t i = 0; i < up.size(); ++i) CHECK(g.grad_x[i] == doctest::Approx(2.5 * up[i]));
  }
  SUBCASE("bias gradient sums upstream over batch and length") {
    const auto spec = random_conv(2, 3, 3, 2, 1, 9);
    const auto x = random_tensor<double>({2, 2, 9}, 10);
    const auto up = random_tensor<double>({2, 3, 5}, 11);
    const auto g = conv1d_backward(x, spec, up);
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < 2; ++b)
        for (const double v : up.row(b, c)) s += v;
      CHECK(g.grad_bias[c] == doctest::Approx(s));
    }
  }
  SUBCASE("matches central finite differences (batch 2, L=9, k=3)") {
    for (const std::size_t stride : {1u, 2u}) {
      auto spec = random_conv(2, 3, 3, stride, 1, 20 + stride);
      auto x = random_tensor<double>({2, 2, 9}, 30 + stride);
      const auto y0 = conv1d_forward(x, spec);
      const auto r = random_vector<double>(y0.size(), 40 + stride);
      const SignalTensor<double> up(y0.shape(), r);
      const auto g = conv1d_backward(x, spec, up);
      auto loss = [&] { return projection<double>(conv1d_forward(x, spec).values(), r); };
      CHECK(gradient_check<double>(x.values(), g.grad_x.values(), loss).max_relative_error <= 1e-4);
      CHECK(gradient_check<double>(spec.weights, g.grad_weights, loss).max_relative_error <= 1e-4);
      CHECK(gradient_check<double>(spec.bias, g.grad_bias, loss).max_relative_error <= 1e-4);
    }
  }
}

TEST_CASE("batchnorm1d") {
  SUBCASE("z-score of an arithmetic sequence") {
    auto spec = BatchNormSpec<double>::identity(1);
    spec.eps = 1e-12;
    const auto y = batchnorm1d(SignalTensor<double>({1, 1, 3}, {1.0, 2.0, 3.0}), spec, Mode::train);
    CHECK(y[0] == doctest::Approx(-1.224744871).epsilon(1e-8));
    CHECK(y[1] == doctest::Approx(0.0));
    CHECK(y[2] == doctest::Approx(1.224744871).epsilon(1e-8));
  }
  SUBCASE("gamma zero yields beta") {
    auto spec = BatchNormSpec<double>::identity(2);
    spec.gamma = {0.0, 0.0};
    spec.beta = {0.5, -3.0};
    const auto y = batchnorm1d(random_tensor<double>({3, 2, 4}, 1), spec, Mode::train);
    for (std::size_t b = 0; b < 3; ++b) {
      for (const double v : y.row(b, 0)) CHECK(v == 0.5);
      for (const double v : y.row(b, 1)) CHECK(v == -3.0);
    }
  }
  SUBCASE("train output moments follow gamma and beta") {
    auto spec = BatchNormSpec<double>::identity(3);
    spec.gamma = {2.0, 0.5, 1.5};
    spec.beta = {1.0, -1.0, 0.0};
    const auto y = batchnorm1d(random_tensor<double>({4, 3, 11}, 2, -5.0, 5.0), spec, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t b = 0; b < 4; ++b)
        for (const double v : y.row(b, c)) sum += v;
      const double mean = sum / 44.0;
      for (std::size_t b = 0; b < 4; ++b)
        for (const double v : y.row(b, c)) sq += (v - mean) * (v - mean);
      CHECK(std::abs(mean - spec.beta[c]) <= 1e-6);
      CHECK(std::abs(sq / 44.0 - spec.gamma[c] * spec.gamma[c]) <= 1e-4);
    }
  }
  SUBCASE("running stats: population variance in use, unbiased stored") {
    auto spec = BatchNormSpec<double>::identity(1);
    batchnorm1d(SignalTensor<double>({1, 1, 3}, {1.0, 2.0, 3.0}), spec, Mode::train);
    CHECK(spec.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
    CHECK(spec.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));  // unbiased var of 1,2,3 is 1
  }
  SUBCASE("eval uses running stats only") {
    auto spec = BatchNormSpec<double>::identity(1);
    spec.running_mean = {2.0};
    spec.running_var = {4.0 - spec.eps};
    const auto y = batchnorm1d(SignalTensor<double>({1, 1, 2}, {2.0, 6.0}), spec, Mode::eval);
    CHECK(y[0] == doctest::Approx(0.0));
    CHECK(y[1] == doctest::Approx(2.0));
    CHECK(spec.running_mean[0] == 2.0);
  }
  SUBCASE("single element per channel is degenerate in train mode") {
    auto spec = BatchNormSpec<double>::identity(1);
    CHECK_THROWS_AS(batchnorm1d(SignalTensor<double>({1, 1, 1}, {1.0}), spec, Mode::train), DegenerateVarianceError);
    CHECK_NOTHROW(batchnorm1d(SignalTensor<double>({1, 1, 1}, {1.0}), spec, Mode::eval));
  }
  SUBCASE("backward matches finite differences") {
    auto spec = BatchNormSpec<double>::identity(3);
    spec.gamma = random_vector<double>(3, 50, 0.5, 2.0);
    spec.beta = random_vector<double>(3, 51);
    auto x = random_tensor<double>({2, 3, 5}, 52, -2.0, 2.0);
    const auto r = random_vector<double>(x.size(), 53);
    for (const Mode mode : {Mode::train, Mode::eval}) {
      const auto g = batchnorm1d_backward(x, spec, SignalTensor<double>(x.shape(), r), mode);
      auto loss = [&] {
        auto copy = spec;
        return projection<double>(batchnorm1d(x, copy, mode).values(), r);
      };
      CHECK(gradient_check<double>(x.values(), g.grad_x.values(), loss).max_relative_error <= 1e-4);
      CHECK(gradient_check<double>(spec.gamma, g.grad_gamma, loss).max_relative_error <= 1e-4);
      CHECK(gradient_check<double>(spec.beta, g.grad_beta, loss).max_relative_error <= 1e-4);
    }
  }
}

TEST_CASE("relu") {
  const SignalTensor<float> x({1, 1, 3}, {-1.0f, 0.0f, 2.0f});
  const auto y = relu(x);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 0.0f);
  CHECK(y[2] == 2.0f);
  const auto neg = relu(random_tensor<float>({2, 2, 5}, 1, -3.0, -0.1));
  for (const float v : neg.values()) CHECK(v == 0.0f);
  const auto g = relu_backward(x, SignalTensor<float>({1, 1, 3}, {5.0f, 6.0f, 7.0f}));
  CHECK(g[0] == 0.0f);
  CHECK(g[1] == 0.0f);  // derivative at exactly 0 is 0
  CHECK(g[2] == 7.0f);

  SUBCASE("finite differences away from the kink") {
    auto xs = random_tensor<double>({2, 2, 6}, 3);
    for (auto& v : xs.values()) v = v >= 0 ? v + 0.05 : v - 0.05;  // |x| > 10 eps
    const auto r = random_vector<double>(xs.size(), 4);
    const auto gx = relu_backward(xs, SignalTensor<double>(xs.shape(), r));
    auto loss = [&] { return projection<double>(relu(xs).values(), r); };
    CHECK(gradient_check<double>(xs.values(), gx.values(), loss).max_relative_error <= 1e-4);
  }
}

TEST_CASE("maxpool1d") {
  SUBCASE("length 89 pools to 45") {
    CHECK(maxpool1d(random_tensor<float>({1, 2, 89}, 1)).output.length() == 45);
  }
  SUBCASE("increasing input selects rightmost in-bounds element") {
    SignalTensor<float> x({1, 1, 10});
    for (std::size_t i = 0; i < 10; ++i) x[i] = static_cast<float>(i);
    const auto r = maxpool1d(x);
    REQUIRE(r.output.length() == 5);
    // windows [-1,1], [1,3], [3,5], [5,7], [7,9]
    for (std::size_t t = 0; t < 5; ++t) {
      CHECK(r.argmax[t] == std::min<std::size_t>(2 * t + 1, 9));
      CHECK(r.output[t] == static_cast<float>(r.argmax[t]));
    }
  }
  SUBCASE("padding is never selected even for all-negative rows") {
    const auto r = maxpool1d(random_tensor<float>({1, 1, 7}, 3, -5.0, -1.0));
    for (const float v : r.output.values()) CHECK(v < -0.5f);
  }
  SUBCASE("ties go to the lowest index; backward routes to argmax and conserves mass") {
    const SignalTensor<double> x({1, 1, 4}, {1.0, 1.0, 1.0, 1.0});
    const auto r = maxpool1d(x);
    CHECK(r.argmax[0] == 0);
    CHECK(r.argmax[1] == 1);
    const SignalTensor<double> up({1, 1, 2}, {3.0, 5.0});
    const auto g = maxpool1d_backward(x.shape(), r.argmax, up);
    CHECK(g[0] == 3.0);
    CHECK(g[1] == 5.0);
    CHECK(g[2] == 0.0);
  }
  SUBCASE("gradient mass is conserved") {
    const auto x = random_tensor<double>({3, 4, 17}, 9);
    const auto r = maxpool1d(x);
    const auto up = random_tensor<double>(r.output.shape(), 10);
    const auto g = maxpool1d_backward(x.shape(), r.argmax, up);
    const double in = std::accumulate(up.values().begin(), up.values().end(), 0.0);
    const double out = std::accumulate(g.values().begin(), g.values().end(), 0.0);
    CHECK(out == doctest::Approx(in).epsilon(1e-12));
  }
  SUBCASE("empty input rejected") {
    CHECK_THROWS_AS(maxpool1d(SignalTensor<float>({1, 1, 0})), ShapeError);
  }
  SUBCASE("finite differences with distinct values") {
    auto x = random_tensor<double>({2, 2, 9}, 12);
    const auto r = maxpool1d(x);
    const auto w = random_vector<double>(r.output.size(), 13);
    const auto g = maxpool1d_backward(x.shape(), r.argmax, SignalTensor<double>(r.output.shape(), w));
    auto loss = [&] { return projection<double>(maxpool1d(x).output.values(), w); };
    std::function<std::uint64_t()> sig = [&] {
      std::uint64_t h = 1469598103934665603ULL;
      for (const auto a : maxpool1d(x).argmax) h = (h ^ a) * 1099511628211ULL;
      return h;
    };
    CHECK(gradient_check<double>(x.values(), g.values(), loss, 1e-3, {}, sig).max_relative_error <= 1e-4);
  }
}

TEST_CASE("global average pool") {
  const auto y = global_avg_pool(SignalTensor<double>({1, 1, 3}, {2.0, 4.0, 6.0}));
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y[0] == doctest::Approx(4.0));
  CHECK(global_avg_pool(SignalTensor<double>({1, 1, 6}, 7.25))[0] == doctest::Approx(7.25));
  const auto g = global_avg_pool_backward({1, 2, 4}, SignalTensor<double>({1, 2, 1}, {8.0, -4.0}));
  for (const double v : g.row(0, 0)) CHECK(v == 2.0);
  for (const double v : g.row(0, 1)) CHECK(v == -1.0);
}

TEST_CASE("dense") {
  SUBCASE("identity weights pass input through") {
    auto spec = DenseSpec<double>::zeros(3, 3);
    for (std::size_t i = 0; i < 3; ++i) spec.weights[i * 3 + i] = 1.0;
    const auto x = random_tensor<double>({2, 3, 1}, 1);
    const auto y = dense_forward(x, spec);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("zero weights give the bias") {
    auto spec = DenseSpec<double>::zeros(4, 2);
    spec.bias = {1.5, -2.0};
    const auto y = dense_forward(random_tensor<double>({3, 4, 1}, 2), spec);
    for (std::size_t b = 0; b < 3; ++b) {
      CHECK(y.at(b, 0, 0) == 1.5);
      CHECK(y.at(b, 1, 0) == -2.0);
    }
  }
  SUBCASE("feature mismatch") {
    CHECK_THROWS_AS(dense_forward(random_tensor<double>({1, 5, 1}, 3), DenseSpec<double>::zeros(4, 2)), ShapeError);
  }
  SUBCASE("random 4 -> 3 backward matches finite differences") {
    auto spec = DenseSpec<double>::zeros(4, 3);
    spec.weights = random_vector<double>(12, 4);
    spec.bias = random_vector<double>(3, 5);
    auto x = random_tensor<double>({2, 4, 1}, 6);
    const auto r = random_vector<double>(6, 7);
    const auto g = dense_backward(x, spec, SignalTensor<double>({2, 3, 1}, r));
    auto loss = [&] { return projection<double>(dense_forward(x, spec).values(), r); };
    // linear in every argument: central differences are exact up to rounding
    CHECK(gradient_check<double>(x.values(), g.grad_x.values(), loss).max_relative_error <= 1e-6);
    CHECK(gradient_check<double>(spec.weights, g.grad_weights, loss).max_relative_error <= 1e-6);
    CHECK(gradient_check<double>(spec.bias, g.grad_bias, loss).max_relative_error <= 1e-6);
  }
}

TEST_CASE("softmax cross-entropy") {
  SUBCASE("equal logits over five classes") {
    const std::vector<double> logits(5, 0.3);
    const auto ce = softmax_cross_entropy<double>(logits, 2);
    for (const double p : ce.probabilities) CHECK(p == doctest::Approx(0.2));
    CHECK(ce.loss == doctest::Approx(std::log(5.0)));
    CHECK(ce.loss == doctest::Approx(1.6094).epsilon(1e-4));
  }
  SUBCASE("large logits stay finite") {
    const std::vector<float> logits{1000.0f, 0.0f};
    const auto ce = softmax_cross_entropy<float>(logits, 0);
    CHECK(std::isfinite(ce.loss));
    CHECK(ce.probabilities[0] == doctest::Approx(1.0));
    CHECK(ce.probabilities[1] == doctest::Approx(0.0));
    const auto wrong = softmax_cross_entropy<float>(logits, 1);
    CHECK(std::isfinite(wrong.loss));
    CHECK(wrong.loss == doctest::Approx(1000.0));
  }
  SUBCASE("probabilities sum to one for |logits| up to 1e4") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto logits = random_vector<double>(7, seed, -1e4, 1e4);
      const auto p = softmax<double>(logits);
      double s = 0.0;
      for (const double v : p) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
  SUBCASE("gradient matches finite differences") {
    auto logits = random_vector<double>(5, 8, -3.0, 3.0);
    const auto ce = softmax_cross_entropy<double>(logits, 3);
    auto loss = [&] { return softmax_cross_entropy<double>(logits, 3).loss; };
    CHECK(gradient_check<double>(logits, ce.grad_logits, loss).max_relative_error <= 1e-4);
  }
  SUBCASE("label out of range and single class rejected") {
    const std::vector<double> two{0.0, 1.0};
    CHECK_THROWS_AS(softmax_cross_entropy<double>(two, 2), ShapeError);
    const std::vector<double> one{0.0};
    CHECK_THROWS_AS(softmax_cross_entropy<double>(one, 0), ShapeError);
  }
  SUBCASE("argmax ties to lowest index") {
    const std::vector<double> tie{2.0, 2.0, 1.0};
    CHECK(argmax<double>(tie) == 0);
  }
}

TEST_CASE("adam optimizer step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<float> params{1.0f, -2.0f, 3.0f};
    const auto before = params;
    const std::vector<float> grads(3, 0.0f);
    OptimizerState<float> state(3, AdamConfig{});
    for (int i = 0; i < 5; ++i) optimizer_step<float>(params, grads, state);
    CHECK(params == before);
    CHECK(state.step == 5);
  }
  SUBCASE("first step moves by lr * sign(g)") {
    // t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    std::vector<double> params{0.5, 0.5, 0.5};
    const std::vector<double> grads{3.0, -0.02, 1e3};
    OptimizerState<double> state(3, AdamConfig{});
    optimizer_step<double>(params, grads, state);
    CHECK(params[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-9));
    CHECK(params[1] == doctest::Approx(0.5 + 1e-3).epsilon(1e-6));
    CHECK(params[2] == doctest::Approx(0.5 - 1e-3).epsilon(1e-9));
  }
  SUBCASE("identical runs are bit-identical") {
    auto run = [] {
      auto params = random_vector<float>(64, 1);
      OptimizerState<float> state(64, AdamConfig{});
      for (std::uint64_t s = 0; s < 20; ++s) {
        const auto grads = random_vector<float>(64, 100 + s);
        optimizer_step<float>(params, grads, state);
      }
      return params;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("tensor invariants") {
  SignalTensor<float> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK_FALSE(t.has_grad());
  CHECK(t.grad().size() == 24);
  CHECK(t.has_grad());
  CHECK(t.all_finite());
  t[5] = std::nanf("");
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(SignalTensor<float>({1, 2, 3}, std::vector<float>(5)), ShapeError);
}

TEST_CASE("layer operations are repeatable bit-for-bit") {
  auto spec = ConvSpec<float>::zeros(2, 4, 3, 2, 1);
  spec.weights = random_vector<float>(spec.weights.size(), 1);
  const auto x = random_tensor<float>({3, 2, 31}, 2);
  const auto a = conv1d_forward(x, spec);
  const auto b = conv1d_forward(x, spec);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}
