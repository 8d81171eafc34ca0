#include "csra/spectral.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "csra/error.hpp"

namespace csra::spectral {

const IndexRange& BandPartition::operator[](Band b) const {
    switch (b) {
        case Band::Low: return low;
        case Band::Mid: return mid;
        case Band::High: return high;
    }
    throw ValidationError("invalid band");
}

Band BandPartition::band_of(int k) const {
    if (low.contains(k)) return Band::Low;
    if (mid.contains(k)) return Band::Mid;
    if (high.contains(k)) return Band::High;
    throw ValidationError("coefficient index " + std::to_string(k) + " outside partition of width " +
                          std::to_string(window));
}

std::vector<int> BandPartition::coefficient_bands() const {
    std::vector<int> out(static_cast<std::size_t>(window));
    for (int k = 0; k < window; ++k) out[static_cast<std::size_t>(k)] = static_cast<int>(band_of(k));
    return out;
}

const Mat& BandComponents::operator[](Band b) const {
    switch (b) {
        case Band::Low: return delta_low;
        case Band::Mid: return delta_mid;
        case Band::High: return delta_high;
    }
    throw ValidationError("invalid band");
}

Mat dct_matrix(int window) {
    if (window < 1) throw ValidationError("DCT window must be positive");
    const double w = window;
    Mat c(window, window);
    for (int k = 0; k < window; ++k) {
        const double s = k == 0 ? std::sqrt(1.0 / w) : std::sqrt(2.0 / w);
        for (int t = 0; t < window; ++t) c(k, t) = s * std::cos(std::numbers::pi * (t + 0.5) * k / w);
    }
    return c;
}

void require_finite(const Mat& x, const char* what) {
    for (Eigen::Index t = 0; t < x.rows(); ++t)
        for (Eigen::Index d = 0; d < x.cols(); ++d)
            if (!std::isfinite(x(t, d)))
                throw ValidationError(std::string(what) + ": non-finite value at (t=" + std::to_string(t) +
                                      ", d=" + std::to_string(d) + ")");
}

Spectrum dct_forward(const Mat& x) {
    if (x.rows() < 2) throw ValidationError("dct_forward: window must be at least 2");
    require_finite(x, "dct_forward");
    return {dct_matrix(static_cast<int>(x.rows())) * x};
}

Mat dct_inverse(const Spectrum& s) {
    if (s.window() < 2) throw ValidationError("dct_inverse: window must be at least 2");
    require_finite(s.coeffs, "dct_inverse");
    return dct_matrix(static_cast<int>(s.window())).transpose() * s.coeffs;
}

BandPartition band_partition(int window) {
    if (window < 3) throw ValidationError("window too short for three bands");
    const int low_end = (window + 2) / 3;
    const int high_begin = window - window / 3;
    return {window, {0, low_end}, {low_end, high_begin}, {high_begin, window}};
}

BandComponents band_components(const Spectrum& s, const BandPartition& p) {
    if (s.window() != p.window)
        throw SchemaError("band_components: spectrum has " + std::to_string(s.window()) +
                          " rows but partition is for W=" + std::to_string(p.window));
    BandComponents out;
    Mat* parts[kBandCount] = {&out.delta_low, &out.delta_mid, &out.delta_high};
    for (int b = 0; b < kBandCount; ++b) {
        const IndexRange& r = p[static_cast<Band>(b)];
        *parts[b] = Mat::Zero(s.coeffs.rows(), s.coeffs.cols());
        parts[b]->middleRows(r.begin, r.size()) = s.coeffs.middleRows(r.begin, r.size());
    }
    return out;
}

}  // namespace csra::spectral
