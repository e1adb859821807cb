#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "epilnet/data.hpp"

namespace epilnet {

struct PlotOptions {
  int width = 900;
  int height = 360;
};

/// SVG with one polyline point per sample, labeled axes and `title`.
std::string render_svg(std::span<const double> samples, const std::string& title, const PlotOptions& options = {});

void plot_sample(const EegRecord& record, const std::string& class_name, const std::filesystem::path& out,
                 const PlotOptions& options = {});

/// First record of each label A..E to <dir>/class_<letter>.svg. Returns the written paths.
std::vector<std::filesystem::path> plot_per_class(const EegDataset& dataset, const std::filesystem::path& dir,
                                                  const PlotOptions& options = {});

}  // namespace epilnet
