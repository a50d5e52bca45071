#include "incfsl/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace incfsl::svg {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 440;
constexpr int kMarginL = 70, kMarginR = 30, kMarginT = 50, kMarginB = 55;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void update(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double margin = 0.05 * (hi - lo);
    lo -= margin;
    hi += margin;
  }
};

double sx(double v, const Range& r) {
  return kMarginL + (v - r.lo) / (r.hi - r.lo) * (kWidth - kMarginL - kMarginR);
}
double sy(double v, const Range& r) {
  return kHeight - kMarginB - (v - r.lo) / (r.hi - r.lo) * (kHeight - kMarginT - kMarginB);
}

std::ofstream open_svg(const std::string& path, const std::string& title) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("svg: cannot open " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"28\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"17\">" << title << "</text>\n";
  return os;
}

void draw_axes(std::ofstream& os, const Range& rx, const Range& ry, const std::string& x_label,
               const std::string& y_label) {
  os << "<rect x=\"" << kMarginL << "\" y=\"" << kMarginT << "\" width=\""
     << kWidth - kMarginL - kMarginR << "\" height=\"" << kHeight - kMarginT - kMarginB
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = rx.lo + (rx.hi - rx.lo) * t / 4.0;
    const double fy = ry.lo + (ry.hi - ry.lo) * t / 4.0;
    os << "<text x=\"" << sx(fx, rx) << "\" y=\"" << kHeight - kMarginB + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">";
    os.precision(4);
    os << fx << "</text>\n";
    os << "<text x=\"" << kMarginL - 8 << "\" y=\"" << sy(fy, ry) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fy
       << "</text>\n";
  }
  os << "<text x=\"" << (kMarginL + kWidth - kMarginR) / 2 << "\" y=\"" << kHeight - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << x_label
     << "</text>\n";
  os << "<text x=\"18\" y=\"" << (kMarginT + kHeight - kMarginB) / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
     << "transform=\"rotate(-90 18 " << (kMarginT + kHeight - kMarginB) / 2 << ")\">" << y_label
     << "</text>\n";
}

void draw_legend(std::ofstream& os, const std::vector<std::pair<std::string, std::string>>& items) {
  int y = kMarginT + 14;
  for (const auto& [label, color] : items) {
    os << "<rect x=\"" << kWidth - kMarginR - 150 << "\" y=\"" << y - 9
       << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n"
       << "<text x=\"" << kWidth - kMarginR - 132 << "\" y=\"" << y + 2
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << label << "</text>\n";
    y += 18;
  }
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<Series>& series, const std::string& x_label,
                      const std::string& y_label) {
  Range rx, ry;
  for (const auto& s : series) {
    for (double v : s.x) rx.update(v);
    for (double v : s.y) ry.update(v);
  }
  rx.pad();
  ry.pad();

  auto os = open_svg(path, title);
  draw_axes(os, rx, ry, x_label, y_label);
  std::vector<std::pair<std::string, std::string>> legend;
  for (size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % 8];
    legend.emplace_back(series[i].label, color);
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t k = 0; k < series[i].x.size(); ++k)
      os << sx(series[i].x[k], rx) << "," << sy(series[i].y[k], ry) << " ";
    os << "\"/>\n";
  }
  draw_legend(os, legend);
  os << "</svg>\n";
}

void write_bar_chart(const std::string& path, const std::string& title,
                     const std::vector<std::string>& categories,
                     const std::vector<BarGroup>& groups, const std::string& y_label) {
  Range ry;
  ry.update(0.0);
  for (const auto& g : groups)
    for (double v : g.values) ry.update(v);
  ry.pad();
  Range rx{0.0, static_cast<double>(categories.size())};

  auto os = open_svg(path, title);
  draw_axes(os, rx, ry, "", y_label);
  const double slot = (kWidth - kMarginL - kMarginR) / std::max<size_t>(1, categories.size());
  const double bar = slot / (groups.size() + 1.0);

  std::vector<std::pair<std::string, std::string>> legend;
  for (size_t g = 0; g < groups.size(); ++g) {
    const std::string color = groups[g].color.empty() ? kPalette[g % 8] : groups[g].color;
    legend.emplace_back(groups[g].label, color);
    for (size_t c = 0; c < groups[g].values.size() && c < categories.size(); ++c) {
      const double v = groups[g].values[c];
      const double x = kMarginL + slot * static_cast<double>(c) + bar * (static_cast<double>(g) + 0.5);
      const double y0 = sy(std::max(0.0, v), ry);
      const double y1 = sy(std::min(0.0, v), ry);
      os << "<rect x=\"" << x << "\" y=\"" << y0 << "\" width=\"" << bar << "\" height=\""
         << std::max(1.0, y1 - y0) << "\" fill=\"" << color << "\"/>\n";
    }
  }
  for (size_t c = 0; c < categories.size(); ++c) {
    os << "<text x=\"" << kMarginL + slot * (static_cast<double>(c) + 0.5) << "\" y=\""
       << kHeight - kMarginB + 18 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       << "font-size=\"12\">" << categories[c] << "</text>\n";
  }
  draw_legend(os, legend);
  os << "</svg>\n";
}

void write_scatter(const std::string& path, const std::string& title,
                   const std::vector<PointGroup>& groups) {
  Range rx, ry;
  for (const auto& g : groups) {
    for (double v : g.x) rx.update(v);
    for (double v : g.y) ry.update(v);
  }
  rx.pad();
  ry.pad();

  auto os = open_svg(path, title);
  draw_axes(os, rx, ry, "component 1", "component 2");
  std::vector<std::pair<std::string, std::string>> legend;
  for (size_t i = 0; i < groups.size(); ++i) {
    const std::string color = groups[i].color.empty() ? kPalette[i % 8] : groups[i].color;
    if (!groups[i].label.empty()) legend.emplace_back(groups[i].label, color);
    for (size_t k = 0; k < groups[i].x.size(); ++k) {
      const double px = sx(groups[i].x[k], rx);
      const double py = sy(groups[i].y[k], ry);
      if (groups[i].as_triangle) {
        os << "<polygon points=\"" << px << "," << py - 6 << " " << px - 5.5 << "," << py + 4.5
           << " " << px + 5.5 << "," << py + 4.5 << "\" fill=\"" << color
           << "\" stroke=\"black\" stroke-width=\"0.8\"/>\n";
      } else {
        os << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"" << color
           << "\" fill-opacity=\"0.65\"/>\n";
      }
    }
  }
  draw_legend(os, legend);
  os << "</svg>\n";
}

}  // namespace incfsl::svg
