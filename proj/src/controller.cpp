#include "csra/controller.hpp"

namespace csra::controller {

ControlVars control(ad::Var z_local, ad::Var z_global, const WeightVars& w) {
    auto hidden = ad::tanh(ad::add_row(ad::matmul(ad::concat_cols({z_local, z_global}), w.hidden_weight), w.hidden_bias));
    auto head = [&](ad::Var weight, ad::Var bias) {
        return ad::sigmoid(ad::add_row(ad::matmul(hidden, weight), bias));
    };
    return {head(w.alpha_weight, w.alpha_bias), head(w.gate_weight, w.gate_bias), head(w.beta_weight, w.beta_bias)};
}

ControlSignals control(const Vec& z_local, const Vec& z_global, const WeightValues& w) {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    auto c = [&](const Mat& m) { return tape.constant(m); };
    const WeightVars vars{c(w.hidden_weight), c(w.hidden_bias), c(w.alpha_weight), c(w.alpha_bias),
                          c(w.gate_weight),   c(w.gate_bias),   c(w.beta_weight),  c(w.beta_bias)};
    auto out = control(c(z_local.transpose()), c(z_global.transpose()), vars);
    return {out.alpha.value().row(0).transpose(), out.gate.value().row(0).transpose(), out.beta.scalar()};
}

}  // namespace csra::controller
