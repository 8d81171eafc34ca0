#include "csra/encoder.hpp"

#include "csra/error.hpp"

namespace csra::encoder {

ad::Var encode_system(ad::Var x_s, ad::Var weight, ad::Var bias, int window) {
    return ad::segment_mean(ad::tanh(ad::add_row(ad::matmul(x_s, weight), bias)), window);
}

ad::Var encode_global(const std::vector<ad::Var>& z_local, ad::Var weight, ad::Var bias) {
    if (z_local.empty()) throw SchemaError("encode_global: no local states");
    return ad::add_row(ad::matmul(ad::concat_cols(z_local), weight), bias);
}

Vec encode_system(const Mat& x_s, const Mat& weight, const Mat& bias) {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    auto z = encode_system(tape.constant(x_s), tape.constant(weight), tape.constant(bias),
                           static_cast<int>(x_s.rows()));
    return z.value().row(0).transpose();
}

Vec encode_global(const std::vector<Vec>& z_local, const Mat& weight, const Mat& bias) {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    std::vector<ad::Var> zs;
    for (const auto& z : z_local) zs.push_back(tape.constant(z.transpose()));
    auto g = encode_global(zs, tape.constant(weight), tape.constant(bias));
    return g.value().row(0).transpose();
}

}  // namespace csra::encoder
