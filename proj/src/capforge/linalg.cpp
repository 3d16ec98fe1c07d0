// SPDX-License-Identifier: Apache-2.0
#include "capforge/linalg.hpp"

#include "capforge/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace capforge {

double cosine_sim(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorKind::InvalidArgument, "cosine_sim: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    require(na > 0.0 && nb > 0.0, ErrorKind::Numeric, "cosine_sim: zero vector");
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(c, -1.0, 1.0);
}

double cosine_sim(const Vector& a, const Vector& b) {
    return cosine_sim(std::span<const double>(a.data(), a.size()), std::span<const double>(b.data(), b.size()));
}

Vector softmax(const Vector& scores) {
    require(scores.size() > 0, ErrorKind::InvalidArgument, "softmax: empty input");
    require(scores.allFinite(), ErrorKind::Numeric, "softmax: non-finite input");
    double mx = scores.maxCoeff();
    Vector e = (scores.array() - mx).exp();
    return e / e.sum();
}

Matrix row_softmax(const Matrix& scores) {
    Matrix out(scores.rows(), scores.cols());
    for (Eigen::Index r = 0; r < scores.rows(); ++r) out.row(r) = softmax(scores.row(r).transpose()).transpose();
    return out;
}

Matrix normalize_rows(const Matrix& m) {
    Matrix out = m;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        double n = m.row(r).norm();
        require(n > 0.0, ErrorKind::Numeric, "normalize_rows: zero row " + std::to_string(r));
        out.row(r) /= n;
    }
    return out;
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), ErrorKind::InvalidArgument, "cosine_matrix: dimension mismatch");
    Matrix out = normalize_rows(a) * normalize_rows(b).transpose();
    return out.cwiseMax(-1.0).cwiseMin(1.0);
}

std::size_t argmax(std::span<const double> v) {
    require(!v.empty(), ErrorKind::InvalidArgument, "argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace capforge
