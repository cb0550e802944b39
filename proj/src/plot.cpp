#include "bilearn/plot.hpp"

#include "bilearn/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace bilearn {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
constexpr double kLeft = 60, kRight = 140, kTop = 36, kBottom = 48;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double w, h;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (w - kLeft - kRight); }
  double py(double y) const { return h - kBottom - (y - y0) / (y1 - y0) * (h - kTop - kBottom); }
};

void widen(double& lo, double& hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
}

void open_svg(std::ostringstream& out, const Frame& f, const PlotStyle& style) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << style.width << "\" height=\"" << style.height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << f.w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(style.title)
      << "</text>\n";
  const double left = kLeft, right = f.w - kRight, top = kTop, bottom = f.h - kBottom;
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << right - left << "\" height=\"" << bottom - top
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    out << "<text x=\"" << f.px(xv) << "\" y=\"" << bottom + 14 << "\" text-anchor=\"middle\">" << fmt(xv)
        << "</text>\n";
    out << "<text x=\"" << left - 4 << "\" y=\"" << f.py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv)
        << "</text>\n";
    out << "<line x1=\"" << left << "\" x2=\"" << right << "\" y1=\"" << f.py(yv) << "\" y2=\"" << f.py(yv)
        << "\" stroke=\"#ddd\"/>\n";
  }
  out << "<text x=\"" << (left + right) / 2 << "\" y=\"" << f.h - 10 << "\" text-anchor=\"middle\">"
      << escape(style.x_label) << "</text>\n";
  out << "<text transform=\"translate(14," << (top + bottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(style.y_label) << "</text>\n";
}

void legend(std::ostringstream& out, const Frame& f, std::size_t i, const std::string& label) {
  const double x = f.w - kRight + 12, y = kTop + 14 + 18.0 * static_cast<double>(i);
  out << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"10\" fill=\"" << kPalette[i % 6]
      << "\"/>\n<text x=\"" << x + 16 << "\" y=\"" << y << "\">" << escape(label) << "</text>\n";
}

}  // namespace

std::string line_plot_svg(std::span<const Series> series, const PlotStyle& style) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "line plot: series '" + s.label + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  widen(x0, x1);
  widen(y0, y1);
  const Frame f{x0, x1, y0, y1, static_cast<double>(style.width), static_cast<double>(style.height)};
  std::ostringstream out;
  open_svg(out, f, style);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    out << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[k % 6] << "\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.y[i])) out << fmt(f.px(s.x[i])) << ',' << fmt(f.py(s.y[i])) << ' ';
    }
    out << "\"/>\n";
    legend(out, f, k, s.label);
  }
  out << "</svg>\n";
  return out.str();
}

std::string histogram_svg(std::span<const Series> groups, double lo, double hi, int bins, const PlotStyle& style) {
  require(bins >= 1, "histogram: need at least one bin");
  require(hi > lo, "histogram: empty range");
  std::vector<std::vector<double>> counts;
  double peak = 1.0;
  for (const auto& g : groups) {
    std::vector<double> c(static_cast<std::size_t>(bins), 0.0);
    for (double v : g.y) {
      if (!std::isfinite(v)) continue;
      const int b = std::clamp(static_cast<int>((v - lo) / (hi - lo) * bins), 0, bins - 1);
      c[static_cast<std::size_t>(b)] += 1.0;
    }
    peak = std::max(peak, *std::max_element(c.begin(), c.end()));
    counts.push_back(std::move(c));
  }
  const Frame f{lo, hi, 0.0, peak, static_cast<double>(style.width), static_cast<double>(style.height)};
  std::ostringstream out;
  open_svg(out, f, style);
  const double bw = (hi - lo) / bins;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    for (int b = 0; b < bins; ++b) {
      const double count = counts[k][static_cast<std::size_t>(b)];
      if (count <= 0.0) continue;
      const double xa = f.px(lo + b * bw), xb = f.px(lo + (b + 1) * bw);
      out << "<rect x=\"" << fmt(xa) << "\" y=\"" << fmt(f.py(count)) << "\" width=\"" << fmt(xb - xa)
          << "\" height=\"" << fmt(f.py(0.0) - f.py(count)) << "\" fill=\"" << kPalette[k % 6]
          << "\" fill-opacity=\"0.5\"/>\n";
    }
    legend(out, f, k, groups[k].label);
  }
  out << "</svg>\n";
  return out.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeError("failed writing " + path.string());
}

}  // namespace bilearn
