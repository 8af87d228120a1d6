// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace stagewise::detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

inline MapMat as_mat(float* p, std::int64_t rows, std::int64_t cols) {
  return MapMat(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline ConstMapMat as_mat(const float* p, std::int64_t rows, std::int64_t cols) {
  return ConstMapMat(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace stagewise::detail
