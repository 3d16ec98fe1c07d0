// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace capforge {

inline constexpr int kUnknownLabel = -1;
inline constexpr int kManifestVersion = 1;

enum class Paradigm { UL, SSL, TRZSL };

Paradigm parse_paradigm(const std::string& s);
std::string to_string(Paradigm p);

struct SplitSpec {
    std::vector<std::size_t> train_unlabeled;
    std::vector<std::size_t> train_labeled;
    std::vector<std::size_t> test;
    std::vector<int> seen_classes;
    std::vector<int> unseen_classes;
};

/// Immutable after load. Feature rows are unit norm.
struct EmbeddingDataset {
    std::size_t n_samples = 0;
    std::size_t n_classes = 0;
    std::size_t dim = 0;
    MatrixF image_features;                    // N x D
    std::optional<MatrixF> image_features_aug; // N x D, stands in for image augmentation
    MatrixF text_features;                     // C x D
    std::vector<std::string> class_names;
    std::vector<int> labels;                   // N entries, kUnknownLabel when absent
    SplitSpec splits;

    bool has_labels() const;
    /// train_unlabeled ∪ train_labeled, or every non-test sample when no training split is declared.
    std::vector<std::size_t> train_pool() const;
    /// Declared test split, or every sample when none is declared.
    std::vector<std::size_t> test_indices() const;

    Matrix images() const { return image_features.cast<double>(); }
    Matrix texts() const { return text_features.cast<double>(); }
    Matrix rows(const std::vector<std::size_t>& idx) const;
};

/// Reads `manifest.json` plus the raw little-endian f32 files it names.
/// Rows whose norm is not already 1 (to 1e-6) are normalized; exact zero rows are rejected.
EmbeddingDataset load_dataset(const std::filesystem::path& dir);

/// Writes the dataset back in the same layout. Floats are written verbatim.
void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& dir);

/// Raw row-major f32 I/O. `read_f32` checks the byte length equals rows*cols*4.
MatrixF read_f32(const std::filesystem::path& file, std::size_t rows, std::size_t cols);
void write_f32(const std::filesystem::path& file, const MatrixF& m);

/// Throws when the dataset violates one of its invariants.
void validate(const EmbeddingDataset& ds);

/// ceil(fraction * C) classes become seen (seeded shuffle). Training samples of seen
/// classes move to train_labeled, unseen ones to train_unlabeled; test is kept.
SplitSpec make_trzsl_split(const EmbeddingDataset& ds, double seen_fraction, std::uint64_t seed);

/// `per_class` labeled training samples for every class, the rest unlabeled.
SplitSpec make_ssl_split(const EmbeddingDataset& ds, std::size_t per_class, std::uint64_t seed);

/// Everything in the training pool unlabeled.
SplitSpec make_ul_split(const EmbeddingDataset& ds);

/// ceil(f * n) guarded against representation error (0.62 * 100 is 62.000000000000007).
std::size_t ceil_fraction(double f, std::size_t n);

}  // namespace capforge
