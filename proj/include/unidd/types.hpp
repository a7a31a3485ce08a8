#pragma once

#include <Eigen/Dense>

namespace unidd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

}  // namespace unidd
