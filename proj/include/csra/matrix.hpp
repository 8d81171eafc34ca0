#pragma once

#include <Eigen/Dense>

namespace csra {

// Row-major so that a batch of windows stored as [B*W x D] can be viewed as
// [B x W*D] without copying.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

}  // namespace csra
