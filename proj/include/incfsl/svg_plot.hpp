#pragma once

#include <string>
#include <vector>

namespace incfsl::svg {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct PointGroup {
  std::string label;
  std::string color;
  bool as_triangle = false;  // triangles mark prototypes, circles mark samples
  std::vector<double> x, y;
};

struct BarGroup {
  std::string label;
  std::string color;
  std::vector<double> values;  // one per category
};

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<Series>& series, const std::string& x_label,
                      const std::string& y_label);

void write_bar_chart(const std::string& path, const std::string& title,
                     const std::vector<std::string>& categories,
                     const std::vector<BarGroup>& groups, const std::string& y_label);

void write_scatter(const std::string& path, const std::string& title,
                   const std::vector<PointGroup>& groups);

}  // namespace incfsl::svg
