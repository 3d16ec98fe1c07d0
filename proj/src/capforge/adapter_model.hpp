// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/linalg.hpp"
#include "capforge/margin.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace capforge {

/// Frozen embeddings plus residual linear maps.
///
/// The two trunk maps stay active at inference; the main, pseudo and text
/// adapters are only used while training. Every map is zero at construction,
/// so an untrained model reproduces zero-shot logits exactly.
struct AdapterModel {
    std::size_t dim = 0;
    double gamma = 100.0;
    Matrix trunk_img;      // D x D
    Matrix trunk_txt;      // D x D
    Matrix main_adapter;   // D x D, visual, learns from D_PL
    Matrix pseudo_adapter; // D x D, visual, learns from thresholded D_UL
    Matrix text_adapter;   // D x D

    static AdapterModel zero_init(std::size_t dim, double gamma);

    void save(const std::filesystem::path& dir, const std::string& config_json = "{}") const;
    static AdapterModel load(const std::filesystem::path& dir);
};

enum class Branch { Main, Pseudo, Inference };

/// Visual output u' for one unit-norm input row.
Vector visual_forward(const AdapterModel& m, const Vector& x, Branch branch);

/// Text outputs t'_c (C x D). `training` adds the text adapter.
Matrix text_forward(const AdapterModel& m, const Matrix& text_features, bool training);

/// gamma * <u', t'_c> for every class. Main and pseudo branches use the training text path.
Vector forward_logits(const AdapterModel& m, const Matrix& text_features, const Vector& x, Branch branch);

/// Logits for many rows at once against precomputed text outputs.
Matrix batch_logits(const AdapterModel& m, const Matrix& text_out, const Matrix& inputs, Branch branch);

struct ModelGrads {
    Matrix trunk_img, trunk_txt, main_adapter, pseudo_adapter, text_adapter;

    static ModelGrads zeros(std::size_t dim);
};

/// One averaged margin-loss term: (1 / rows) * sum_i L_m(y_i, z_i).
struct LossTerm {
    const Matrix* inputs = nullptr; // rows are samples
    std::vector<int> labels;
    Branch branch = Branch::Main;
};

/// Sum of the given terms and (optionally) its gradient w.r.t. all five maps.
/// Empty terms contribute nothing.
double loss_and_grad(const AdapterModel& m, const Matrix& text_features, const std::vector<LossTerm>& terms,
                     const Matrix& margin, ModelGrads* grads);

}  // namespace capforge
