// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/concept_align.hpp"
#include "capforge/embedding_store.hpp"

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace capforge {

struct ConfusionPair {
    int favored = 0;   // zero-shot leans toward this class
    int disfavored = 0;
    double bias = 0.5; // in [0, 1]
};

struct SynthSpec {
    std::size_t n_classes = 10;
    std::size_t per_class = 60;      // training samples per class
    std::size_t test_per_class = 20; // held-out samples per class
    std::size_t dim = 32;
    double intra_class_std = 0.1;
    std::size_t n_mismatch = 0;
    std::size_t n_confusion_pairs = 0;
    double confusion_bias = 0.7;
    double confusion_cos = 0.9;      // cosine between the centers of a confused pair
    double min_center_angle_deg = 60.0;
    double aug_noise_std = 0.05;
    double description_noise = 0.05;
    std::size_t n_descriptions = 5;
    std::uint64_t seed = 7;
};

struct GroundTruth {
    std::vector<int> mismatched;
    std::vector<ConfusionPair> confusion_pairs;
    Matrix centers; // C x D
};

struct SynthOutput {
    EmbeddingDataset dataset;
    GroundTruth truth;
    std::vector<DescriptionCandidate> descriptions; // n_descriptions per class
};

/// Gaussian clusters on the unit sphere with planted concept mismatch
/// (text feature orthogonal to every class center) and concept confusion
/// (close centers, text features skewed toward the favored class).
SynthOutput generate(const SynthSpec& spec);

/// Dataset files plus ground_truth.json and descriptions.json.
void write_synth(const SynthOutput& out, const SynthSpec& spec, const std::filesystem::path& dir);

/// Confused groups as class sets, one per planted pair.
std::vector<std::vector<int>> planted_groups(const GroundTruth& gt);

}  // namespace capforge
