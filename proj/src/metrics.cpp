#include "csra/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "csra/error.hpp"

namespace csra::metrics {

namespace {

void check_shapes(const Mat& pred, const Mat& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw SchemaError("metric: prediction and target shapes differ");
    if (pred.size() == 0) throw ValidationError("metric: empty input");
}

void check_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw SchemaError("metric: scores and labels differ in length");
    for (int l : labels)
        if (l != 0 && l != 1) throw ValidationError("metric: labels must be 0 or 1");
}

std::vector<std::size_t> order_by(const std::vector<double>& scores, bool descending) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return descending ? scores[a] > scores[b] : scores[a] < scores[b];
    });
    return idx;
}

}  // namespace

double mse(const Mat& pred, const Mat& target) {
    check_shapes(pred, target);
    return (pred - target).array().square().mean();
}

double mae(const Mat& pred, const Mat& target) {
    check_shapes(pred, target);
    return (pred - target).array().abs().mean();
}

std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary(scores, labels);
    const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const auto neg = static_cast<double>(labels.size()) - pos;
    if (pos == 0.0 || neg == 0.0) return std::nullopt;

    // Mann-Whitney U with mid-ranks for ties.
    const auto idx = order_by(scores, false);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (labels[idx[k]] == 1) rank_sum += mid_rank;
        i = j;
    }
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

std::optional<double> auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary(scores, labels);
    const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    if (pos == 0.0 || pos == static_cast<double>(labels.size())) return std::nullopt;

    const auto idx = order_by(scores, true);
    double tp = 0.0, seen = 0.0, prev_recall = 0.0, ap = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        for (std::size_t k = i; k < j; ++k) tp += labels[idx[k]];
        seen += static_cast<double>(j - i);
        const double recall = tp / pos;
        ap += (recall - prev_recall) * (tp / seen);
        prev_recall = recall;
        i = j;
    }
    return ap;
}

}  // namespace csra::metrics
