#pragma once

// Joint objective: task loss on the original branch, anchor consistency on the
// augmented branch, and the two controller regularisers.

#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csra/augmentor.hpp"
#include "csra/autodiff.hpp"
#include "csra/backbones.hpp"
#include "csra/spectral.hpp"

namespace csra {

enum class Task { Regression, Classification };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

/// A mini-batch of windows. x is [B*W x D]; y_reg [B x D_target]; y_cls [B x 1].
struct Batch {
    Mat x;
    Mat y_reg;
    Mat y_cls;
    int window = 0;

    Eigen::Index size() const { return window > 0 ? x.rows() / window : 0; }
};

struct LossWeights {
    double lambda_cons = 0.5;
    double lambda_ctrl = 0.1;
    double lambda_inter = 1.0;
    double lambda_intra = 0.1;
    double tau = 0.5;
    double eps = 1e-6;
    /// Task loss on the augmented branch against the original label.
    double aug_task_weight = 0.0;
    /// Weight on L_orig; only test harnesses change it.
    double orig_weight = 1.0;
};

struct LossBreakdown {
    double l_orig = 0.0;
    double l_cons = 0.0;
    double l_inter = 0.0;
    double l_intra = 0.0;
    double l_ctrl = 0.0;
    double l_aug_task = 0.0;
    double l_total = 0.0;

    nlohmann::json to_json() const;
};

// ---- individual terms (graph) ------------------------------------------------------

/// Regression: MSE over samples and target dims. Classification: BCE on logits.
ad::Var task_loss(ad::Var pred, const Mat& target, Task task);

/// SmoothL1 (transition 1) between the augmented prediction and a stop-gradient
/// anchor. Throws ValidationError if the anchor carries gradient.
ad::Var consistency_loss(ad::Var pred_aug, ad::Var anchor);

/// Sum over systems and bands of softplus(u - tau)^2, averaged over samples.
/// Each entry of `u` is [B x K].
ad::Var inter_reg(const std::vector<ad::Var>& u, double tau);

/// -(1/S) sum_s H(q_s) with q_t = m_t / (sum_j m_j + eps), H(q) = -sum q ln(q + eps),
/// averaged over samples. Each gate is [B x W].
ad::Var intra_reg(const std::vector<ad::Var>& gates, double eps);

// ---- individual terms (values) -----------------------------------------------------

double task_loss(const Mat& pred, const Mat& target, Task task);
double consistency_loss(const Mat& pred_aug, const Mat& anchor);
/// u_k = beta * alpha_k * ||delta_k||_1, the norm divided by W*D_s for InterNorm::Mean.
Vec modulation_strength(double beta, const Vec& alpha, const spectral::BandComponents& bands,
                        InterNorm norm = InterNorm::Mean);
/// u is S x K for a single sample.
double inter_reg(const Mat& u, double tau);
/// One gate vector per system for a single sample.
double intra_reg(const std::vector<Vec>& gates, double eps);

// ---- joint objective ---------------------------------------------------------------

struct ObjectiveGraph {
    ad::Var total;
    LossBreakdown breakdown;
    PredictorVars original;
    std::vector<SystemAugmentVars> augmentation;  // empty without an augmentor
};

/// Builds the full objective for one batch on `tape`.
///
/// Without an augmentor (NoAug) only L_orig is formed. With one, the augmented
/// branch reuses the original branch's dropout masks, and the anchor is the
/// detached original prediction. If `anchor_model` is given the anchor is
/// computed with it instead of `model`.
ObjectiveGraph total_loss(ad::Tape& tape, const Batch& batch, Task task, Predictor& model, Augmentor* augmentor,
                          const LossWeights& weights, DropoutContext* dropout,
                          std::mt19937_64* noise_rng = nullptr, Predictor* anchor_model = nullptr);

}  // namespace csra
