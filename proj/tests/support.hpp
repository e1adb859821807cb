#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <random>
#include <span>
#include <vector>

#include "epilnet/tensor.hpp"

namespace epilnet::testing {

template <typename T>
std::vector<T> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> out(n);
  for (auto& v : out) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
SignalTensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return SignalTensor<T>(shape, random_vector<T>(shape.numel(), seed, lo, hi));
}

/// sum_i weights[i] * y[i], accumulated in double.
template <typename T>
double projection(std::span<const T> y, std::span<const T> weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * static_cast<double>(weights[i]);
  return s;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag = "tmp");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace epilnet::testing
