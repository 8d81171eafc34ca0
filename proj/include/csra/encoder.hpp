#pragma once

// Per-system and global state encoding that conditions the controller.

#include <vector>

#include "csra/autodiff.hpp"

namespace csra::encoder {

struct SystemState {
    std::vector<Vec> z_local;
    Vec z_global;
};

/// Per-timestep affine map followed by tanh, mean-pooled over time.
/// x_s is [B*W x D_s], weight [D_s x d_sys], bias [1 x d_sys]; returns [B x d_sys].
ad::Var encode_system(ad::Var x_s, ad::Var weight, ad::Var bias, int window);

/// Concatenate the S local states in schema order, then one affine map.
/// Each z is [B x d_sys]; weight is [S*d_sys x d_g]; returns [B x d_g].
ad::Var encode_global(const std::vector<ad::Var>& z_local, ad::Var weight, ad::Var bias);

// Single-sample conveniences; x_s is [W x D_s].
Vec encode_system(const Mat& x_s, const Mat& weight, const Mat& bias);
Vec encode_global(const std::vector<Vec>& z_local, const Mat& weight, const Mat& bias);

}  // namespace csra::encoder
