// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/linalg.hpp"

#include <cstdint>
#include <vector>

namespace capforge {

struct KMeansOptions {
    std::uint64_t seed = 0;
    int max_iter = 300;
    double tol = 1e-6;
};

struct ClusterModel {
    std::size_t k = 0;
    Matrix centroids;                  // k x D
    std::vector<std::size_t> assignments;
    double inertia = 0.0;              // sum of squared distances to assigned centroid
    std::vector<double> inertia_trace; // inertia after every assignment step
    int iterations = 0;
};

/// Seeded k-means++ followed by Lloyd iterations on squared Euclidean distance.
///
/// Stops when the largest centroid shift drops below `tol` or after
/// `max_iter` rounds. A cluster that goes empty is reseeded at the point
/// farthest from its current centroid, then points are reassigned so every
/// point still sits with its nearest centroid (ties to the lowest index).
/// Deterministic for fixed (points, k, seed).
ClusterModel kmeans(const Matrix& points, std::size_t k, const KMeansOptions& opts = {});

/// Nearest centroid under squared Euclidean distance, lowest index on ties.
std::size_t nearest_centroid(const Matrix& centroids, const Eigen::Ref<const Vector>& point, double* dist2 = nullptr);

}  // namespace capforge
