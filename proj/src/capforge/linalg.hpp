// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>

namespace capforge {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Cosine of the angle between two non-zero vectors. Throws on a zero vector.
double cosine_sim(std::span<const double> a, std::span<const double> b);
double cosine_sim(const Vector& a, const Vector& b);

/// Numerically stable softmax of each row (max-subtraction). Throws on NaN/Inf.
Matrix row_softmax(const Matrix& scores);

/// Softmax of a single vector, same contract as row_softmax.
Vector softmax(const Vector& scores);

/// Rows scaled to unit L2 norm. Throws if any row is exactly zero.
Matrix normalize_rows(const Matrix& m);

/// Cosine similarity of every row of `a` against every row of `b`.
Matrix cosine_matrix(const Matrix& a, const Matrix& b);

/// Index of the largest element, lowest index on ties.
std::size_t argmax(std::span<const double> v);
inline std::size_t argmax(const Vector& v) { return argmax(std::span<const double>(v.data(), v.size())); }

}  // namespace capforge
