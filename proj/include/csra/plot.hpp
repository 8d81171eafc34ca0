#pragma once

// Small static SVG charts. Every writer is deterministic: identical inputs
// produce byte-identical files.

#include <filesystem>
#include <string>
#include <vector>

#include "csra/matrix.hpp"

namespace csra::plot {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    /// Optional symmetric error bars; empty or same length as y.
    std::vector<double> err;
};

/// Rows x cols heatmap with labelled axes and per-cell values.
void heatmap(const std::filesystem::path& path, const Mat& values, const std::vector<std::string>& row_labels,
             const std::vector<std::string>& col_labels, const std::string& title);

void bar_chart(const std::filesystem::path& path, const std::vector<double>& values,
               const std::vector<std::string>& labels, const std::string& title, const std::string& y_label);

void line_chart(const std::filesystem::path& path, const std::vector<Series>& series, const std::string& title,
                const std::string& x_label, const std::string& y_label);

}  // namespace csra::plot
