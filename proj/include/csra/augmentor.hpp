#pragma once

// System-conditioned spectral residual augmentation:
//   split -> DCT -> band reweighting -> inverse DCT -> gate/scale -> residual add -> merge.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "csra/autodiff.hpp"
#include "csra/controller.hpp"
#include "csra/spectral.hpp"
#include "csra/systems.hpp"

namespace csra {

/// How the L1 norm in the modulation strength is normalised.
enum class InterNorm { Mean, Raw };

std::string to_string(InterNorm n);
InterNorm inter_norm_from_string(const std::string& s);

struct AugmentorConfig {
    int window = 6;
    int system_dim = 32;
    int global_dim = 64;
    int controller_hidden = 64;
    /// false: residual taken directly in the time domain with one scalar weight.
    bool spectral = true;
    /// Test/ablation harness: force beta = 0 (identity augmentation).
    bool clamp_beta_zero = false;
    /// Optional zero-mean Gaussian noise added to the reweighted spectrum.
    double residual_noise_std = 0.0;
    InterNorm inter_norm = InterNorm::Mean;
};

/// Per-sample, per-system record of what the augmentor did.
struct AugmentationDiagnostics {
    std::string system_id;
    /// Empty matrices when the spectral path is disabled.
    spectral::BandComponents bands;
    /// R before gating and scaling, [W x D_s].
    Mat residual;
    controller::ControlSignals signals;
    /// Effective modulation strengths (normalised per config.inter_norm).
    Vec u;
    /// Same quantities with the raw L1 norm.
    Vec u_raw;
};

// ---- value-level building blocks ------------------------------------------------

/// alpha_low * delta_low + alpha_mid * delta_mid + alpha_high * delta_high.
spectral::Spectrum reweight_bands(const spectral::BandComponents& bands, const Vec& alpha);

struct SystemAugmentResult {
    Mat augmented;
    AugmentationDiagnostics diagnostics;
};

/// X_s + beta * (gate broadcast over columns) .* R with R = IDCT(reweight(bands(DCT(X_s)))).
SystemAugmentResult augment_system(const Mat& x_s, const controller::ControlSignals& signals,
                                   const spectral::BandPartition& partition,
                                   InterNorm norm = InterNorm::Mean);

/// Time-domain variant used by the no-spectral ablation: R = alpha * X_s.
SystemAugmentResult augment_system_time_domain(const Mat& x_s, const controller::ControlSignals& signals,
                                               InterNorm norm = InterNorm::Mean);

// ---- differentiable, batched augmentor ------------------------------------------

/// Graph handles for one system over a batch.
struct SystemAugmentVars {
    ad::Var alpha;     // [B x K]
    ad::Var gate;      // [B x W]
    ad::Var beta;      // [B x 1]
    ad::Var residual;  // [B*W x D_s], R before gating
    ad::Var scaled_residual;  // [B*W x D_s], beta * gate .* R
    ad::Var u;         // [B x K]
};

struct AugmentVars {
    ad::Var augmented;  // [B*W x D]
    std::vector<SystemAugmentVars> systems;
};

class Augmentor {
public:
    Augmentor(SystemSchema schema, AugmentorConfig config);

    Augmentor(const Augmentor&) = delete;
    Augmentor& operator=(const Augmentor&) = delete;
    Augmentor(Augmentor&&) = default;

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation of every weight and bias.
    void init(std::mt19937_64& rng);
    /// Sets every parameter to zero.
    void zero();

    ad::ParameterSet& params() { return params_; }
    const ad::ParameterSet& params() const { return params_; }
    const SystemSchema& schema() const { return schema_; }
    const AugmentorConfig& config() const { return config_; }
    const spectral::BandPartition& partition() const { return partition_; }
    int band_count() const { return config_.spectral ? spectral::kBandCount : 1; }

    /// Batched forward pass. x is [B*W x D]. `noise_rng` is required only when
    /// residual_noise_std > 0.
    AugmentVars forward(ad::Tape& tape, ad::Var x, std::mt19937_64* noise_rng = nullptr);

    /// Single-sample augmentation with per-system diagnostics. x is [W x D].
    std::pair<Mat, std::vector<AugmentationDiagnostics>> augment(const Mat& x);

    /// Diagnostics for every sample of a batch [B*W x D]; outer index is the sample.
    std::vector<std::vector<AugmentationDiagnostics>> diagnose(const Mat& batch);

    controller::WeightValues controller_weights(int system) const;
    Mat encoder_weight(int system) const;
    Mat encoder_bias(int system) const;
    Mat global_weight() const;
    Mat global_bias() const;

private:
    SystemSchema schema_;
    AugmentorConfig config_;
    spectral::BandPartition partition_;
    Mat dct_;
    Mat band_indicator_;  // [W x K]: 1 where coefficient row k belongs to band column
    ad::ParameterSet params_;
};

}  // namespace csra
