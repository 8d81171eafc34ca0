#pragma once

#include <optional>
#include <vector>

#include "csra/matrix.hpp"

namespace csra::metrics {

/// Mean over samples and target dimensions.
double mse(const Mat& pred, const Mat& target);
double mae(const Mat& pred, const Mat& target);

/// Rank-based AUROC; tied positive/negative pairs count 0.5.
/// nullopt when only one class is present.
std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Step-wise average precision: sum over distinct thresholds of
/// (recall_n - recall_{n-1}) * precision_n. nullopt without positives or negatives.
std::optional<double> auprc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace csra::metrics
