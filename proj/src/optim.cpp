#include "csra/optim.hpp"

#include <cmath>

namespace csra {

void Adam::add(const std::string& prefix, ad::ParameterSet& params) {
    for (auto& p : params) {
        slots_.push_back({prefix + p->name, p.get(), Mat::Zero(p->value.rows(), p->value.cols()),
                          Mat::Zero(p->value.rows(), p->value.cols())});
    }
}

void Adam::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (auto& s : slots_) {
        Mat& value = s.param->value;
        Mat g = s.param->grad.size() == value.size() ? s.param->grad : Mat::Zero(value.rows(), value.cols());
        if (options_.weight_decay != 0.0) g += options_.weight_decay * value;
        s.m = options_.beta1 * s.m + (1.0 - options_.beta1) * g;
        s.v = options_.beta2 * s.v + (1.0 - options_.beta2) * g.cwiseProduct(g);
        value.array() -= options_.lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + options_.eps);
    }
}

void Adam::save(Checkpoint& ckpt) const {
    for (const auto& s : slots_) {
        ckpt.blocks.emplace_back("adam.m." + s.name, s.m);
        ckpt.blocks.emplace_back("adam.v." + s.name, s.v);
    }
}

void Adam::load(const Checkpoint& ckpt, long steps) {
    for (auto& s : slots_) {
        s.m = ckpt.at("adam.m." + s.name);
        s.v = ckpt.at("adam.v." + s.name);
    }
    step_ = steps;
}

}  // namespace csra
