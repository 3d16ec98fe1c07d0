// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/adapter_model.hpp"
#include "capforge/embedding_store.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace capforge {

inline constexpr std::size_t kEceBins = 15;
inline constexpr double kConfusedGroupThreshold = 0.85;

struct AccuracyReport {
    double overall_acc = 0.0;
    std::vector<double> per_class_acc;       // NaN-free: classes without test samples get 0
    std::vector<std::size_t> class_support;  // test samples per true class
    std::optional<double> seen_acc, unseen_acc, harmonic_mean;
    std::vector<std::size_t> pred_counts;
    double pred_count_std = 0.0;             // population std
    double imbalance_ratio = 0.0;            // max / min nonzero count
    double min_class_acc = 0.0;              // over classes with test support
};

/// Accuracy fields from predictions and ground-truth labels (same length).
AccuracyReport accuracy_from_predictions(const std::vector<int>& pred, const std::vector<int>& truth, std::size_t n_classes,
                                         const std::vector<int>& seen_classes = {});

/// Inference-branch accuracy on the test split. Throws when test labels are missing.
AccuracyReport accuracy_report(const AdapterModel& model, const EmbeddingDataset& ds);

double harmonic_mean(double a, double b);
double population_std(const std::vector<std::size_t>& counts);

/// k-means with k = C over the labeled samples; per class the fraction of its
/// samples that land in its most common cluster.
std::vector<double> cluster_concentration(const EmbeddingDataset& ds, std::uint64_t seed,
                                          const std::vector<std::size_t>& samples = {});

/// Per class, the fraction of its samples in its modal cluster, given assignments.
std::vector<double> concentration_from_assignments(const std::vector<int>& labels, const std::vector<std::size_t>& assignments,
                                                   std::size_t n_classes, std::size_t k);

/// Connected components (size >= 2) of the graph with edge i-j iff S_ij >= theta, i != j.
std::vector<std::vector<int>> find_confused_groups(const Matrix& similarity, double theta = kConfusedGroupThreshold);

struct EceResult {
    double ece = 0.0;
    std::size_t samples = 0;
    bool empty = false; // no prediction fell into the group
};

/// ECE over samples whose *predicted* class is in `group`, equal-width bins on [0, 1].
EceResult local_ece(const std::vector<int>& pred, const std::vector<double>& confidence, const std::vector<int>& truth,
                    const std::vector<int>& group, std::size_t bins = kEceBins);

struct ConfidenceHistogram {
    std::vector<double> edges;        // bins + 1
    std::vector<std::size_t> correct;
    std::vector<std::size_t> incorrect;

    std::size_t total() const;
};

/// Histogram of max-softmax confidence for samples predicted into `group`,
/// split by correctness. An empty group yields an empty histogram.
ConfidenceHistogram confidence_density(const std::vector<int>& pred, const std::vector<double>& confidence,
                                       const std::vector<int>& truth, const std::vector<int>& group, std::size_t bins = kEceBins);

/// Bin for a confidence in [0, 1]; 1.0 lands in the last bin.
std::size_t confidence_bin(double confidence, std::size_t bins);

}  // namespace capforge
