#pragma once

// Aggregations shared by the CLI and the experiment harnesses.

#include <optional>
#include <string>
#include <vector>

#include "csra/augmentor.hpp"
#include "csra/dataset.hpp"

namespace csra::report {

struct MeanStd {
    double mean = 0.0;
    /// Sample standard deviation (n - 1); 0 for a single value.
    double stddev = 0.0;
    std::size_t n = 0;
};

/// Ignores missing values; n == 0 yields NaN mean and std.
MeanStd mean_std(const std::vector<std::optional<double>>& values);
MeanStd mean_std(const std::vector<double>& values);

struct ControllerSummary {
    /// Per-sample modulation strengths; u[i] is S x K.
    std::vector<Mat> u;
    /// Mean over samples, S x K.
    Mat mean_u;
    /// Row means of mean_u, one per system.
    std::vector<double> system_mean;
    std::vector<std::string> system_ids;
    std::vector<std::string> band_labels;
};

/// Runs the augmentor over every window and averages u per system and band.
ControllerSummary summarize_controller(Augmentor& augmentor, const WindowSet& windows);

}  // namespace csra::report
