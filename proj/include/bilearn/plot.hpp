#pragma once

// Minimal SVG output for training curves and weight histograms.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bilearn {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotStyle {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 400;
};

std::string line_plot_svg(std::span<const Series> series, const PlotStyle& style);

/// Overlaid histograms on [lo, hi] with `bins` equal-width bins.
std::string histogram_svg(std::span<const Series> groups, double lo, double hi, int bins, const PlotStyle& style);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace bilearn
