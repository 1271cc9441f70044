#pragma once

// Minimal SVG line and bar charts for reports.

#include <filesystem>
#include <string>
#include <vector>

namespace nf::plot {

struct Series {
    std::string name;
    std::vector<double> y;
};

/// Lines over a shared x axis; y is drawn on [0, 1].
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::vector<double>& x, const std::vector<Series>& series);

/// One bar per label; y range is [min(0, lo), max(1, hi)].
std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                      const std::vector<double>& values);

void write_svg(const std::filesystem::path& path, const std::string& svg);

}  // namespace nf::plot
