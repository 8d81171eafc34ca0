#pragma once

// Orthonormal DCT along the time axis and the fixed low/mid/high band split.

#include <array>
#include <vector>

#include "csra/matrix.hpp"

namespace csra::spectral {

/// DCT-II coefficients of a [W x D_s] trajectory, one column per feature.
struct Spectrum {
    Mat coeffs;

    Eigen::Index window() const { return coeffs.rows(); }
};

/// Half-open index range [begin, end).
struct IndexRange {
    int begin = 0;
    int end = 0;

    int size() const { return end - begin; }
    bool contains(int k) const { return k >= begin && k < end; }
    friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

enum class Band : int { Low = 0, Mid = 1, High = 2 };
inline constexpr int kBandCount = 3;

struct BandPartition {
    int window = 0;
    IndexRange low;
    IndexRange mid;
    IndexRange high;

    const IndexRange& operator[](Band b) const;
    Band band_of(int k) const;
    /// Band index (0, 1, 2) of every coefficient row.
    std::vector<int> coefficient_bands() const;
};

/// Masked copies of a spectrum, one per band. They sum to the spectrum.
struct BandComponents {
    Mat delta_low;
    Mat delta_mid;
    Mat delta_high;

    const Mat& operator[](Band b) const;
    const Mat& operator[](int k) const { return (*this)[static_cast<Band>(k)]; }
};

/// Orthonormal DCT-II basis as a [W x W] matrix; row k is frequency k.
/// Inverse (DCT-III) is its transpose.
Mat dct_matrix(int window);

/// Throws ValidationError naming the first non-finite (t, d) entry.
void require_finite(const Mat& x, const char* what);

Spectrum dct_forward(const Mat& x);
Mat dct_inverse(const Spectrum& s);

/// low = [0, ceil(W/3)), high = [W - floor(W/3), W), mid in between.
BandPartition band_partition(int window);

BandComponents band_components(const Spectrum& s, const BandPartition& p);

}  // namespace csra::spectral
