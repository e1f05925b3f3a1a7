#pragma once

#include <Eigen/Core>

namespace pbam {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Index = Eigen::Index;

}  // namespace pbam
