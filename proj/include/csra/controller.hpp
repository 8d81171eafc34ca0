#pragma once

// Maps [z_local; z_global] to band weights, a temporal gate, and a scale.

#include "csra/autodiff.hpp"

namespace csra::controller {

/// Per-system control signals for one sample.
/// alpha in [0,1]^K (K = 3 bands, or 1 without spectral decomposition),
/// gate in [0,1]^W, beta in (0,1).
struct ControlSignals {
    Vec alpha;
    Vec gate;
    double beta = 0.0;
};

/// Weights of one per-system controller. Shapes, with In = d_sys + d_g:
/// hidden [In x Hc] / [1 x Hc], alpha [Hc x K], gate [Hc x W], beta [Hc x 1].
template <typename T>
struct Weights {
    T hidden_weight, hidden_bias;
    T alpha_weight, alpha_bias;
    T gate_weight, gate_bias;
    T beta_weight, beta_bias;
};

using WeightVars = Weights<ad::Var>;
using WeightValues = Weights<Mat>;

/// Batched outputs: alpha [B x K], gate [B x W], beta [B x 1].
struct ControlVars {
    ad::Var alpha;
    ad::Var gate;
    ad::Var beta;
};

ControlVars control(ad::Var z_local, ad::Var z_global, const WeightVars& w);

ControlSignals control(const Vec& z_local, const Vec& z_global, const WeightValues& w);

}  // namespace csra::controller
