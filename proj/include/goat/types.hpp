#pragma once

#include <Eigen/Dense>

namespace goat {

using Index = Eigen::Index;

template <typename Scalar>
using VecX = Eigen::Vector<Scalar, Eigen::Dynamic>;

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using VecXd = VecX<double>;
using MatXd = MatX<double>;

}  // namespace goat
