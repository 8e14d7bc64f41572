#pragma once

#include <Eigen/Dense>

namespace umaptour {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Storage layout for activations and embeddings: one example per row.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using RowMatrixf = RowMatrix<float>;
using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

}  // namespace umaptour
