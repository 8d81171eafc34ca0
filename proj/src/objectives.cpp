#include "csra/objectives.hpp"

#include <cmath>

#include "csra/error.hpp"

namespace csra {

std::string to_string(Task t) { return t == Task::Regression ? "regression" : "classification"; }

Task task_from_string(const std::string& s) {
    if (s == "regression") return Task::Regression;
    if (s == "classification") return Task::Classification;
    throw UsageError("task must be 'regression' or 'classification', got '" + s + "'");
}

nlohmann::json LossBreakdown::to_json() const {
    return {{"l_orig", l_orig},   {"l_cons", l_cons}, {"l_inter", l_inter},       {"l_intra", l_intra},
            {"l_ctrl", l_ctrl},   {"l_aug_task", l_aug_task}, {"l_total", l_total}};
}

// ---- graph -----------------------------------------------------------------------------

ad::Var task_loss(ad::Var pred, const Mat& target, Task task) {
    if (!pred.value().allFinite()) throw DivergenceError("task_loss: non-finite prediction");
    if (task == Task::Regression) return ad::mse_loss(pred, target);
    for (Eigen::Index i = 0; i < target.size(); ++i) {
        const double y = target.data()[i];
        if (y != 0.0 && y != 1.0) throw ValidationError("task_loss: classification targets must be 0 or 1");
    }
    return ad::bce_with_logits(pred, target);
}

ad::Var consistency_loss(ad::Var pred_aug, ad::Var anchor) {
    if (anchor.requires_grad()) throw ValidationError("consistency_loss: anchor must be detached from the graph");
    if (pred_aug.rows() != anchor.rows() || pred_aug.cols() != anchor.cols())
        throw SchemaError("consistency_loss: shape mismatch");
    return ad::smooth_l1(pred_aug, anchor);
}

ad::Var inter_reg(const std::vector<ad::Var>& u, double tau) {
    if (u.empty()) throw SchemaError("inter_reg: no systems");
    const auto batch = static_cast<double>(u.front().rows());
    std::vector<ad::Var> terms;
    for (const auto& us : u) terms.push_back(ad::sum(ad::square(ad::softplus(ad::add_scalar(us, -tau)))));
    ad::Var total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
    return ad::scale(total, 1.0 / batch);
}

ad::Var intra_reg(const std::vector<ad::Var>& gates, double eps) {
    if (gates.empty()) throw SchemaError("intra_reg: no systems");
    const auto batch = static_cast<double>(gates.front().rows());
    ad::Var total;
    for (const auto& m : gates) {
        auto q = ad::div_col(m, ad::add_scalar(ad::row_sum(m), eps));
        // sum_t q ln(q + eps) = -H(q)
        auto neg_entropy = ad::sum(ad::mul(q, ad::log_eps(q, eps)));
        total = total.valid() ? ad::add(total, neg_entropy) : neg_entropy;
    }
    return ad::scale(total, 1.0 / (batch * static_cast<double>(gates.size())));
}

// ---- values ----------------------------------------------------------------------------

double task_loss(const Mat& pred, const Mat& target, Task task) {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    return task_loss(tape.constant(pred), target, task).scalar();
}

double consistency_loss(const Mat& pred_aug, const Mat& anchor) {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    return consistency_loss(tape.constant(pred_aug), tape.constant(anchor)).scalar();
}

Vec modulation_strength(double beta, const Vec& alpha, const spectral::BandComponents& bands, InterNorm norm) {
    if (alpha.size() != spectral::kBandCount) throw ValidationError("modulation_strength: alpha must have 3 entries");
    Vec u(spectral::kBandCount);
    for (int k = 0; k < spectral::kBandCount; ++k) {
        const Mat& d = bands[k];
        double l1 = d.cwiseAbs().sum();
        if (norm == InterNorm::Mean) l1 /= static_cast<double>(d.size());
        u(k) = beta * alpha(k) * l1;
    }
    return u;
}

double inter_reg(const Mat& u, double tau) {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    std::vector<ad::Var> rows;
    for (Eigen::Index s = 0; s < u.rows(); ++s) rows.push_back(tape.constant(u.row(s)));
    return inter_reg(rows, tau).scalar();
}

double intra_reg(const std::vector<Vec>& gates, double eps) {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    std::vector<ad::Var> vars;
    for (const auto& g : gates) vars.push_back(tape.constant(g.transpose()));
    return intra_reg(vars, eps).scalar();
}

// ---- joint objective ------------------------------------------------------------------

ObjectiveGraph total_loss(ad::Tape& tape, const Batch& batch, Task task, Predictor& model, Augmentor* augmentor,
                          const LossWeights& w, DropoutContext* dropout, std::mt19937_64* noise_rng,
                          Predictor* anchor_model) {
    const Mat& target = task == Task::Regression ? batch.y_reg : batch.y_cls;
    auto head = [task](const PredictorVars& p) { return task == Task::Regression ? p.reg : p.cls_logit; };

    ObjectiveGraph g;
    auto x = tape.constant(batch.x);
    if (dropout) dropout->record();
    g.original = model.forward(tape, x, dropout);
    auto l_orig = task_loss(head(g.original), target, task);
    g.breakdown.l_orig = l_orig.scalar();
    ad::Var total = ad::scale(l_orig, w.orig_weight);

    if (augmentor) {
        auto aug = augmentor->forward(tape, x, noise_rng);
        if (dropout) dropout->replay();
        auto augmented_pred = model.forward(tape, aug.augmented, dropout);

        ad::Var anchor;
        if (anchor_model) {
            if (dropout) dropout->replay();
            anchor = ad::detach(head(anchor_model->forward(tape, x, dropout)));
        } else {
            anchor = ad::detach(head(g.original));
        }
        auto l_cons = consistency_loss(head(augmented_pred), anchor);

        std::vector<ad::Var> us, gates;
        for (const auto& s : aug.systems) {
            us.push_back(s.u);
            gates.push_back(s.gate);
        }
        auto l_inter = inter_reg(us, w.tau);
        auto l_intra = intra_reg(gates, w.eps);
        auto l_ctrl = ad::add(ad::scale(l_inter, w.lambda_inter), ad::scale(l_intra, w.lambda_intra));

        g.breakdown.l_cons = l_cons.scalar();
        g.breakdown.l_inter = l_inter.scalar();
        g.breakdown.l_intra = l_intra.scalar();
        g.breakdown.l_ctrl = l_ctrl.scalar();

        total = ad::add(total, ad::add(ad::scale(l_cons, w.lambda_cons), ad::scale(l_ctrl, w.lambda_ctrl)));
        if (w.aug_task_weight != 0.0) {
            auto l_aug = task_loss(head(augmented_pred), target, task);
            g.breakdown.l_aug_task = l_aug.scalar();
            total = ad::add(total, ad::scale(l_aug, w.aug_task_weight));
        }
        g.augmentation = std::move(aug.systems);
    }
    g.breakdown.l_total = total.scalar();
    if (!std::isfinite(g.breakdown.l_total)) throw DivergenceError("total loss is not finite");
    g.total = total;
    return g;
}

}  // namespace csra
