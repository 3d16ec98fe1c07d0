// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/linalg.hpp"

#include <map>
#include <utility>
#include <vector>

namespace capforge {

/// Snapshot of the confusion-aware margin, rebuilt once per epoch.
struct MarginState {
    Matrix similarity;                // S, C x C, clamped to [0, 1]
    std::vector<std::size_t> sigma;   // confident predictions per class
    std::vector<double> delta;        // class-wise tendency, 0 for the most predicted class
    double big_delta = 0.0;           // overall imbalance, max(delta)
    std::vector<double> scales;       // m * big_delta * delta_c
    Matrix margin;                    // M, diagonal zero
    double base_scale = 0.0;          // m
    double tau = 0.0;

    /// All-zero margin of size C (plain cross-entropy).
    static MarginState zeros(std::size_t n_classes);
};

struct Prototypes {
    Matrix visual; // C x D, unit rows
    Matrix text;   // C x D, unit rows
};

/// Row-mean of each class's features, L2-normalized. Text prototypes are
/// passed through (normalized). Throws if a class has no rows.
Prototypes class_prototypes(const std::map<int, Matrix>& features_by_class, const Matrix& text_features);

/// S_ij = max(cos(visual_i, visual_j), cos(text_i, text_j)) clamped to [0, 1].
Matrix similarity_matrix(const Matrix& visual_protos, const Matrix& text_protos);

struct Tendency {
    std::vector<std::size_t> sigma;
    std::vector<double> delta;
    double big_delta = 0.0;
};

/// `predictions` holds (argmax class, max softmax) per pseudolabeled sample.
/// When nothing clears tau, delta is all zero and the margin is disabled.
Tendency tendency_stats(const std::vector<std::pair<int, double>>& predictions, double tau, std::size_t n_classes);

/// M_ij = S_ij * (m * big_delta * delta_i), diagonal zeroed.
Matrix margin_matrix(const Matrix& similarity, const std::vector<double>& delta, double big_delta, double base_scale);

MarginState build_margin_state(const Matrix& similarity, const Tendency& tendency, double base_scale, double tau);

struct LossGrad {
    double loss = 0.0;
    Vector grad; // d loss / d logits
};

/// -log( e^{z_y} / (e^{z_y} + sum_{c != y} e^{z_c + M_yc}) ) with its gradient
/// (softmax of the adjusted logits minus one-hot y).
LossGrad margin_loss(int y, const Vector& logits, const Matrix& margin);

/// Plain cross-entropy, independent of margin_loss.
double cross_entropy(int y, const Vector& logits);

}  // namespace capforge
