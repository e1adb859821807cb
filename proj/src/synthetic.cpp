#include "epilnet/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace epilnet {

namespace {

constexpr double kSampleRate = 173.61;

}  // namespace

std::vector<double> synthetic_window(int label, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;

  double amp = 0.0, freq = 0.0, noise = 0.0, spike_rate = 0.0, spike_amp = 0.0;
  switch (label) {
    case 1: amp = 45; freq = 10.0; noise = 15; break;
    case 2: amp = 20; freq = 12.0; noise = 35; break;
    case 3: amp = 55; freq = 5.0; noise = 25; break;
    case 4: amp = 60; freq = 4.5; noise = 30; spike_rate = 0.6; spike_amp = 120; break;
    case 5: amp = 320; freq = 3.0; noise = 60; spike_rate = 3.0; spike_amp = 450; break;
    default: throw ConfigError("synthetic label outside 1..5: " + std::to_string(label));
  }
  amp *= 0.6 + 0.8 * unit(rng);
  freq *= 0.8 + 0.4 * unit(rng);
  const double phase = two_pi * unit(rng);
  const double offset = 10.0 * gauss(rng);

  std::vector<double> out(kWindowLength);
  double drift = 0.0;
  for (std::size_t t = 0; t < kWindowLength; ++t) {
    const double time = static_cast<double>(t) / kSampleRate;
    drift = 0.95 * drift + 0.3 * noise * gauss(rng);
    out[t] = offset + amp * std::sin(two_pi * freq * time + phase) + drift + noise * 0.5 * gauss(rng);
  }
  if (spike_rate > 0.0) {
    std::poisson_distribution<int> count(spike_rate * static_cast<double>(kWindowLength) / kSampleRate * 2.0);
    const int spikes = count(rng);
    for (int k = 0; k < spikes; ++k) {
      const double centre = unit(rng) * static_cast<double>(kWindowLength);
      const double height = spike_amp * (0.5 + unit(rng)) * (unit(rng) < 0.8 ? -1.0 : 1.0);
      for (std::size_t t = 0; t < kWindowLength; ++t) {
        const double d = (static_cast<double>(t) - centre) / 2.5;
        out[t] += height * std::exp(-0.5 * d * d);
      }
    }
  }
  for (auto& v : out) v = std::round(v);
  return out;
}

EegDataset make_synthetic_dataset(std::size_t per_label, std::uint64_t seed) {
  EegDataset dataset;
  dataset.has_id_column = true;
  std::mt19937_64 seeder(seed);
  for (std::size_t i = 0; i < per_label; ++i) {
    for (int label = 1; label <= 5; ++label) {
      EegRecord record;
      record.id = "X" + std::to_string(i + 1) + ".V" + std::to_string(label);
      record.samples = synthetic_window(label, seeder());
      record.label = label;
      record.source_index = dataset.records.size();
      dataset.records.push_back(std::move(record));
    }
  }
  return dataset;
}

}  // namespace epilnet
