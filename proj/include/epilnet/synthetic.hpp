#pragma once

#include <cstddef>
#include <cstdint>

#include "epilnet/data.hpp"

namespace epilnet {

/// ESR-shaped stand-in data: `per_label` windows of each class A..E with an ID
/// column. Class morphology is loosely modelled on the real recordings (alpha
/// rhythm, broadband, theta, sparse spikes, large spike-wave) with per-window
/// jitter so the classes overlap.
EegDataset make_synthetic_dataset(std::size_t per_label, std::uint64_t seed);

std::vector<double> synthetic_window(int label, std::uint64_t seed);

}  // namespace epilnet
