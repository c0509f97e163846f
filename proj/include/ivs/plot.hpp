#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ivs {

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

/// Self-contained SVG line chart with axes, ticks and a legend.
void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotSeries>& series);

}  // namespace ivs
