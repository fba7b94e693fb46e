#pragma once

#include <Eigen/Dense>
#include <vector>

namespace cst {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

}  // namespace cst
