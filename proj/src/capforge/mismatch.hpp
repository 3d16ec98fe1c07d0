// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/embedding_store.hpp"

#include <cstdint>
#include <vector>

namespace capforge {

inline constexpr double kDefaultGamma = 100.0;

struct ZeroShot {
    std::vector<int> pred;          // argmax class per sample
    std::vector<double> confidence; // max softmax probability
    Matrix probs;                   // N x C softmax of gamma * cosine
};

/// gamma * cos(v_i, w_c) over all classes, softmax, argmax (lowest index on ties).
ZeroShot zero_shot_predict(const EmbeddingDataset& ds, double gamma = kDefaultGamma);

struct MismatchIteration {
    int text_class = 0;      // i*: class whose text feature matched best
    std::size_t cluster = 0; // j*
    double confidence = 0.0; // P[i*, j*]
    std::size_t cap = 0;     // s = floor(|I| / |T|) for this round
    std::vector<std::size_t> removed; // sample ids
};

struct MismatchReport {
    std::size_t t = 0;
    std::vector<int> y_final;
    std::vector<int> y_low_t;
    std::vector<int> y_mm;
    std::vector<std::size_t> remaining_samples; // I_final, sample ids
    std::vector<MismatchIteration> trace;
    std::vector<std::size_t> predicted_counts;  // zero-shot predictions per class over the pool
};

struct DetectOptions {
    std::size_t t = 0;
    std::uint64_t seed = 0;
    double gamma = kDefaultGamma;
    /// Samples to cluster; empty means the training pool.
    std::vector<std::size_t> pool;
    /// Candidate classes; empty means every class.
    std::vector<int> classes;
};

/// ceil(C / 10), never below 1.
std::size_t default_threshold(std::size_t n_classes);

/// Iterative clustering: each round clusters the remaining features into |T|
/// groups, picks the (text, centroid) pair with the highest row-softmax score,
/// drops that class and the top-s confident samples of the matched cluster
/// that zero-shot assigns to it. Runs while at least t classes remain.
/// Mismatched classes are the survivors that are also among the t least
/// predicted classes.
MismatchReport detect_mismatch(const EmbeddingDataset& ds, const DetectOptions& opts);

}  // namespace capforge
