#pragma once

#include <array>
#include <string>
#include <vector>

namespace romelab {

struct ScatterSeries {
  std::string label;
  std::string color;  // any SVG color string
  std::vector<std::array<double, 2>> points;
};

// Self-contained SVG scatter plot: axes, tick labels, legend, one circle per
// point. Pure string emission, deterministic for identical inputs.
std::string scatter_svg(const std::vector<ScatterSeries>& series,
                        const std::string& title, const std::string& x_label,
                        const std::string& y_label);

}  // namespace romelab
