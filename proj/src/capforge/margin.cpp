// SPDX-License-Identifier: Apache-2.0
#include "capforge/margin.hpp"

#include "capforge/error.hpp"

#include <algorithm>
#include <cmath>

namespace capforge {

MarginState MarginState::zeros(std::size_t n_classes) {
    const auto c = static_cast<Eigen::Index>(n_classes);
    MarginState s;
    s.similarity = Matrix::Zero(c, c);
    s.sigma.assign(n_classes, 0);
    s.delta.assign(n_classes, 0.0);
    s.scales.assign(n_classes, 0.0);
    s.margin = Matrix::Zero(c, c);
    return s;
}

Prototypes class_prototypes(const std::map<int, Matrix>& features_by_class, const Matrix& text_features) {
    const Eigen::Index n_classes = text_features.rows();
    Prototypes p;
    p.visual = Matrix::Zero(n_classes, text_features.cols());
    for (Eigen::Index c = 0; c < n_classes; ++c) {
        auto it = features_by_class.find(static_cast<int>(c));
        require(it != features_by_class.end() && it->second.rows() > 0, ErrorKind::InvalidArgument,
                "class_prototypes: class " + std::to_string(c) + " has no features");
        require(it->second.cols() == text_features.cols(), ErrorKind::InvalidArgument, "class_prototypes: dimension mismatch");
        p.visual.row(c) = it->second.colwise().mean();
    }
    p.visual = normalize_rows(p.visual);
    p.text = normalize_rows(text_features);
    return p;
}

Matrix similarity_matrix(const Matrix& visual_protos, const Matrix& text_protos) {
    require(visual_protos.rows() == text_protos.rows(), ErrorKind::InvalidArgument, "similarity_matrix: class count mismatch");
    const Matrix sv = cosine_matrix(visual_protos, visual_protos);
    const Matrix st = cosine_matrix(text_protos, text_protos);
    Matrix s = sv.cwiseMax(st).cwiseMax(0.0).cwiseMin(1.0);
    // symmetric up to the order of dot-product accumulation; make it exact
    Matrix sym = 0.5 * (s + s.transpose());
    return sym;
}

Tendency tendency_stats(const std::vector<std::pair<int, double>>& predictions, double tau, std::size_t n_classes) {
    Tendency t;
    t.sigma.assign(n_classes, 0);
    for (const auto& [cls, conf] : predictions) {
        require(cls >= 0 && static_cast<std::size_t>(cls) < n_classes, ErrorKind::InvalidArgument, "tendency_stats: class out of range");
        if (conf >= tau) ++t.sigma[static_cast<std::size_t>(cls)];
    }
    t.delta.assign(n_classes, 0.0);
    const std::size_t top = n_classes == 0 ? 0 : *std::max_element(t.sigma.begin(), t.sigma.end());
    if (top == 0) return t;
    for (std::size_t c = 0; c < n_classes; ++c)
        t.delta[c] = 1.0 - static_cast<double>(t.sigma[c]) / static_cast<double>(top);
    t.big_delta = *std::max_element(t.delta.begin(), t.delta.end());
    return t;
}

Matrix margin_matrix(const Matrix& similarity, const std::vector<double>& delta, double big_delta, double base_scale) {
    require(similarity.rows() == similarity.cols() && static_cast<std::size_t>(similarity.rows()) == delta.size(),
            ErrorKind::InvalidArgument, "margin_matrix: shape mismatch");
    Matrix m = similarity;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        m.row(i) *= base_scale * big_delta * delta[static_cast<std::size_t>(i)];
        m(i, i) = 0.0;
    }
    return m;
}

MarginState build_margin_state(const Matrix& similarity, const Tendency& tendency, double base_scale, double tau) {
    MarginState s;
    s.similarity = similarity;
    s.sigma = tendency.sigma;
    s.delta = tendency.delta;
    s.big_delta = tendency.big_delta;
    s.base_scale = base_scale;
    s.tau = tau;
    s.scales.resize(s.delta.size());
    for (std::size_t c = 0; c < s.delta.size(); ++c) s.scales[c] = base_scale * tendency.big_delta * s.delta[c];
    s.margin = margin_matrix(similarity, tendency.delta, tendency.big_delta, base_scale);
    return s;
}

LossGrad margin_loss(int y, const Vector& logits, const Matrix& margin) {
    const Eigen::Index c = logits.size();
    require(y >= 0 && y < c, ErrorKind::InvalidArgument, "margin_loss: label out of range");
    require(margin.rows() == c && margin.cols() == c, ErrorKind::InvalidArgument, "margin_loss: margin shape mismatch");
    require(logits.allFinite(), ErrorKind::Numeric, "margin_loss: non-finite logits");

    Vector adjusted = logits + margin.row(y).transpose();
    adjusted(y) = logits(y);
    const double mx = adjusted.maxCoeff();
    Vector e = (adjusted.array() - mx).exp();
    const double z = e.sum();
    LossGrad out;
    out.loss = std::log(z) + mx - adjusted(y);
    out.grad = e / z;
    out.grad(y) -= 1.0;
    return out;
}

double cross_entropy(int y, const Vector& logits) {
    require(logits.allFinite(), ErrorKind::Numeric, "cross_entropy: non-finite logits");
    double ref = logits(0);
    for (Eigen::Index i = 1; i < logits.size(); ++i) ref = std::max(ref, logits(i));
    double s = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) s += std::exp(logits(i) - ref);
    return ref + std::log(s) - logits(y);
}

}  // namespace capforge
