#include "epilnet/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace epilnet {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string render_svg(std::span<const double> samples, const std::string& title, const PlotOptions& options) {
  if (samples.empty()) throw std::invalid_argument("cannot plot an empty signal");
  const double left = 70, right = 20, top = 40, bottom = 50;
  const double w = options.width - left - right;
  const double h = options.height - top - bottom;
  auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi - lo < 1e-12) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double n = static_cast<double>(samples.size() > 1 ? samples.size() - 1 : 1);
  auto x = [&](std::size_t i) { return left + w * static_cast<double>(i) / n; };
  auto y = [&](double v) { return top + h * (hi - v) / (hi - lo); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\"" << options.height
      << "\" viewBox=\"0 0 " << options.width << ' ' << options.height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<title>" << escape(title) << "</title>\n";
  svg << "<text x=\"" << num(left + w / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << escape(title) << "</text>\n";
  svg << "<g stroke=\"#444\" stroke-width=\"1\">\n";
  svg << "<line x1=\"" << num(left) << "\" y1=\"" << num(top + h) << "\" x2=\"" << num(left + w) << "\" y2=\"" << num(top + h) << "\"/>\n";
  svg << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\"" << num(top + h) << "\"/>\n";
  svg << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">\n";
  for (std::size_t i = 0; i < samples.size(); i += 25) {
    svg << "<text x=\"" << num(x(i)) << "\" y=\"" << num(top + h + 16) << "\" text-anchor=\"middle\">" << i << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    svg << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y(v) + 4) << "\" text-anchor=\"end\">" << std::lround(v) << "</text>\n";
  }
  svg << "<text x=\"" << num(left + w / 2) << "\" y=\"" << num(options.height - 10.0) << "\" text-anchor=\"middle\">Sample index</text>\n";
  svg << "<text x=\"16\" y=\"" << num(top + h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << num(top + h / 2)
      << ")\">Amplitude (uV)</text>\n</g>\n";
  svg << "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.2\" points=\"";
  for (std::size_t i = 0; i < samples.size(); ++i) svg << (i ? " " : "") << num(x(i)) << ',' << num(y(samples[i]));
  svg << "\"/>\n</svg>\n";
  return svg.str();
}

void plot_sample(const EegRecord& record, const std::string& class_name, const std::filesystem::path& out,
                 const PlotOptions& options) {
  std::string title = "EEG window, class " + class_name;
  if (!record.id.empty()) title += " (" + record.id + ")";
  const auto svg = render_svg(record.samples, title, options);
  std::ofstream file(out);
  if (!file) throw std::runtime_error("cannot write " + out.string());
  file << svg;
  if (!file) throw std::runtime_error("write failed for " + out.string());
}

std::vector<std::filesystem::path> plot_per_class(const EegDataset& dataset, const std::filesystem::path& dir,
                                                  const PlotOptions& options) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (int label = 1; label <= 5; ++label) {
    const auto it = std::find_if(dataset.records.begin(), dataset.records.end(), [&](const EegRecord& r) { return r.label == label; });
    if (it == dataset.records.end()) continue;
    const std::string letter(1, label_letter(label));
    const auto path = dir / ("class_" + letter + ".svg");
    plot_sample(*it, letter, path, options);
    written.push_back(path);
  }
  return written;
}

}  // namespace epilnet
